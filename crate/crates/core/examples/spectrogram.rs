//! Turns one crop of a chirp recording into the three-channel image and
//! writes it as a PNG.

use dbcl::dsp::{crop_to_image, encode_png, ImageOptions, Stft};
use dbcl::synthgen::{synth_one, JammerClass, SynthConfig};

fn main() -> dbcl::Result<()> {
    let cfg = SynthConfig { seed: 3, ..SynthConfig::default() };
    let rec = synth_one(&cfg, JammerClass::SingleChirp, 0)?;
    let to64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let plan = Stft::new(1024, 256)?;
    let img = crop_to_image(&to64(&rec.i), &to64(&rec.q), &plan, 1e-6, &ImageOptions::default())?;
    for (c, name) in ["log magnitude", "phase cosine", "phase sine"].iter().enumerate() {
        let ch = img.channel(c);
        let mean = ch.iter().map(|&v| v as f64).sum::<f64>() / ch.len() as f64;
        println!("channel {c} ({name}): mean {mean:.3}");
    }
    let path = std::env::temp_dir().join("chirp.png");
    std::fs::write(&path, encode_png(&img)?).map_err(|e| dbcl::Error::Format(e.to_string()))?;
    println!("wrote {}x{} image to {}", img.size, img.size, path.display());
    Ok(())
}
