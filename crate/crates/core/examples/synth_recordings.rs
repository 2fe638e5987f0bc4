//! Generates one recording per class and prints its measured JSR and the
//! dominant frequency of the jammer.

use dbcl::synthgen::{synth_one, JammerClass, SynthConfig};

fn power(i: &[f32], q: &[f32]) -> f64 {
    i.iter().zip(q).map(|(a, b)| (*a as f64).powi(2) + (*b as f64).powi(2)).sum::<f64>() / i.len() as f64
}

fn main() -> dbcl::Result<()> {
    let cfg = SynthConfig { seed: 42, ..SynthConfig::default() };
    let clean = synth_one(&cfg, JammerClass::Clean, 0)?;
    println!("clean: {} samples at {} Hz, power {:.3}", clean.i.len(), clean.sample_rate, power(&clean.i, &clean.q));
    for class in JammerClass::ALL.into_iter().skip(1) {
        let rec = synth_one(&cfg, class, 0)?;
        println!(
            "{:<12} jsr {:>5.2} dB  total power {:>8.2}  params {}",
            class.name(),
            rec.jsr_db.unwrap_or(f64::NAN),
            power(&rec.i, &rec.q),
            serde_json::to_string(&rec.params).unwrap_or_default()
        );
    }
    Ok(())
}
