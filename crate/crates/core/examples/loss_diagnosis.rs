//! Classifies loss trajectories into training regimes.
//!
//! cargo run --example loss_diagnosis

use ftloop::analysis::{classify_loss_curve, LossRules};
use ftloop::eval::LossPoint;

fn curve(train: &[f64], eval: Option<&[f64]>) -> Vec<LossPoint> {
    train
        .iter()
        .enumerate()
        .map(|(i, &t)| LossPoint {
            step: i as u64 + 1,
            train_loss: t,
            eval_loss: eval.map(|e| e[i]),
        })
        .collect()
}

fn main() -> anyhow::Result<()> {
    let rules = LossRules::default();
    let examples: [(&str, &[f64], Option<&[f64]>); 4] = [
        ("eval loss rises late", &[2.0, 1.2, 0.8, 0.5], Some(&[1.5, 1.3, 1.4, 1.6])),
        ("loss becomes NaN", &[2.0, f64::NAN], None),
        ("loss barely moves", &[2.0, 1.95, 1.93, 1.92], None),
        ("steady descent", &[2.0, 1.4, 1.0, 0.7], Some(&[2.1, 1.5, 1.1, 0.9])),
    ];
    for (label, train, eval) in examples {
        let verdict = classify_loss_curve(&curve(train, eval), &rules)?;
        println!("{label}: {} {:?}", verdict.regime.as_str(), verdict.evidence);
    }
    Ok(())
}
