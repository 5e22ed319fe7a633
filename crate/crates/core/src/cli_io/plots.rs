//! Gnuplot scripts for the CSV outputs. Run with `gnuplot <script>` inside the output directory.

use crate::experiments::TrajectoryLog;

pub fn signal_script() -> String {
    "set datafile separator ','\n\
     set key autotitle columnhead\n\
     set terminal pngcairo size 900,500\n\
     set output 'observations.png'\n\
     set xlabel 't'\n\
     plot for [i=2:*] 'observations.csv' using 1:i with lines\n"
        .to_string()
}

pub fn heatmap_script() -> String {
    "set datafile separator ','\n\
     set terminal pngcairo size 700,600\n\
     set output 'heatmap.png'\n\
     set view map\n\
     set xlabel 'x'\n\
     set ylabel 'y'\n\
     splot 'heatmap.csv' skip 1 using 1:2:3 with points pointtype 5 palette notitle\n"
        .to_string()
}

/// Parameter estimates and sensor coordinates against time, one panel each.
pub fn trajectory_script(scenario: &str, log: &TrajectoryLog) -> String {
    let n_theta = log.header.theta_names.len();
    let n_coord = log.header.coord_names.len();
    let file = format!("{scenario}_trial{}.csv", log.header.trial);
    let mut s = String::new();
    s.push_str("set datafile separator ','\nset key autotitle columnhead\n");
    s.push_str(&format!("set terminal pngcairo size 1000,800\nset output 'plot_{scenario}.png'\n"));
    s.push_str("set multiplot layout 3,1\nset xlabel 't'\n");
    s.push_str(&format!("plot for [i=3:{}] '{file}' using 2:i with lines\n", 2 + n_theta));
    if n_coord > 0 {
        s.push_str(&format!("plot for [i={}:{}] '{file}' using 2:i with lines\n", 3 + n_theta, 2 + n_theta + n_coord));
    }
    s.push_str(&format!("plot '{file}' using 2:{} with lines\n", 5 + n_theta + n_coord));
    s.push_str("unset multiplot\n");
    s
}
