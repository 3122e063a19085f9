//! RMSE, dynamic time warping and Student-t intervals on small series.

use waterflood::metrics::{coverage, dtw, rmse, student_t_quantile, t_interval, IntervalForecast};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let observed = [100.0, 120.0, 150.0, 130.0, 110.0, 100.0];
    let shifted = [100.0, 100.0, 120.0, 150.0, 130.0, 110.0];
    println!("a one-day lag: RMSE {:.2}, DTW {:.2}", rmse(&shifted, &observed)?, dtw(&shifted, &observed)?);
    println!("dtw([1,2,3], [1,3]) = {}", dtw(&[1.0, 2.0, 3.0], &[1.0, 3.0])?);

    println!("t(0.975, 4) = {:.4}", student_t_quantile(0.975, 4.0));
    let (lo, hi) = t_interval(&[10.0, 11.0, 12.0, 13.0, 14.0], 0.95)?;
    println!("95% interval of {{10..14}}: ({lo:.3}, {hi:.3})");

    let members = [[98.0, 118.0, 149.0], [104.0, 125.0, 152.0], [101.0, 119.0, 160.0]];
    let mut iv = IntervalForecast {
        points: vec![],
        lower: vec![],
        upper: vec![],
        level: 0.95,
    };
    for k in 0..3 {
        let col: Vec<f64> = members.iter().map(|m| m[k]).collect();
        let (lo, hi) = t_interval(&col, 0.95)?;
        iv.points.push(col.iter().sum::<f64>() / col.len() as f64);
        iv.lower.push(lo);
        iv.upper.push(hi);
    }
    println!("ensemble coverage of the observations: {:.2}", coverage(&iv, &observed[..3])?);
    Ok(())
}
