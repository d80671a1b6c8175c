use psdeob_core::eval::run_script;
use psdeob_core::extract::extract_urls;
use psdeob_core::pipeline::deobfuscate_source;
use psdeob_core::synth::{generate_synthetic_sample, random_urls, Rng, Techniques};

fn mask_to_techniques(mask: u8) -> Techniques {
    Techniques {
        split_strings: mask & 1 != 0,
        format_op: mask & 2 != 0,
        replace_token: mask & 4 != 0,
        char_cast: mask & 8 != 0,
        backticks: mask & 16 != 0,
        dead_code: mask & 32 != 0,
        random_names: mask & 64 != 0,
    }
}

fn main() {
    let mut failures = 0u32;
    let mut checked = 0u64;
    for seed in 1..=3000u64 {
        let mask = (seed % 128) as u8;
        let techniques = mask_to_techniques(mask);
        let mut rng = Rng::new(seed.wrapping_mul(0x517C_C1B7));
        let urls = random_urls(&mut rng);
        let (script, entry) = generate_synthetic_sample(&urls, seed, techniques);
        let output = match deobfuscate_source(script.as_bytes()) {
            Ok(o) => o,
            Err(e) => {
                eprintln!("seed {seed} mask {mask:07b}: decode error {e}");
                failures += 1;
                continue;
            }
        };
        let extraction = extract_urls(&output.deob);
        if extraction.urls != entry.urls {
            eprintln!("seed {seed} mask {mask:07b}: URL MISMATCH\n{script}\ngot: {:?}\nwant: {:?}", extraction.urls, entry.urls);
            failures += 1;
            continue;
        }
        let second = run_script(&output.deob.residual);
        if second.rendered != output.deob.rendered {
            eprintln!("seed {seed} mask {mask:07b}: RENDER NOT FIXED POINT");
            failures += 1;
            continue;
        }
        checked += 1;
    }
    println!("checked {checked} samples, {failures} failures");
    std::process::exit(if failures == 0 { 0 } else { 1 });
}
