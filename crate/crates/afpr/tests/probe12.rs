// scratch probe: basin-hopping restarts vs anneal variations (not part of the suite; deleted before release)
use afpr::ambiguity::{af_distance, ambiguity_map, signal_distance, AmbiguityMap};
use afpr::initializer::{run_initialization_masked, InitConfig};
use afpr::sampling::{add_noise, apply_mask, make_mask, MaskKind, MaskMode, NoiseSpec, SamplingMask};
use afpr::signal::{
    align_residue_phases, project_to_support, ComplexSignal, SupportKind, SupportSpec,
    WaveformKind, WaveformRecipe,
};
use afpr::solver::{run_recovery, SolverConfig};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn masked_fit(x: &ComplexSignal, surface: &AmbiguityMap, mask: &SamplingMask) -> f64 {
    let predicted = ambiguity_map(x);
    let n = surface.n_len();
    let mut num = 0.0;
    let mut den = 0.0;
    for p in 0..n {
        for k in 0..n {
            if !mask.is_kept(p, k) {
                continue;
            }
            let a = surface.get(p, k).max(0.0).sqrt();
            let w = predicted.get(p, k).max(0.0).sqrt();
            num += (a - w) * (a - w);
            den += a * a;
        }
    }
    (num / den).sqrt()
}

fn perturb(x: &ComplexSignal, delta: f64, seed: u64, spec: &SupportSpec) -> ComplexSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let noise: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    let noise_norm: f64 = noise.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let x_norm: f64 = x.samples().iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let scale = delta * x_norm / noise_norm;
    let bumped =
        ComplexSignal::from_fn(n, |i| x.at(i as isize) + noise[i] * scale).unwrap();
    project_to_support(&bumped, spec)
}

#[test]
#[ignore]
fn probe_basin_hopping() {
    let n = 128usize;
    let seed = 7u64;
    let stride = 4usize;
    let recipe = WaveformRecipe {
        kind: WaveformKind::GaussianSpectrum,
        n_len: n,
        seed,
        ..WaveformRecipe::default()
    };
    let truth = recipe.generate_supported(SupportKind::BandLimited).unwrap();
    let clean = ambiguity_map(&truth);
    let noisy = add_noise(&clean, &NoiseSpec::new(20.0, seed ^ 0x9e37_79b9)).unwrap();
    let mask = make_mask(n, &MaskKind::UniformDelay { keep_every: stride }, MaskMode::ZeroFill)
        .unwrap();
    let masked = apply_mask(&noisy, &mask).unwrap();
    let spec = recipe.implied_support(SupportKind::BandLimited).unwrap();
    let solve_mask = mask.with_mode(MaskMode::Exclude);

    let init = run_initialization_masked(&masked, &mask, Some(&spec), &InitConfig::default())
        .unwrap();
    let start = project_to_support(&init.refined, &spec);
    let full = SolverConfig { mu0: 0.5, max_iters: 20_000, seed, ..SolverConfig::default() };
    let x1 = run_recovery(&noisy, &solve_mask, &start, &full, Some(&truth)).unwrap().signal;
    println!(
        "baseline  : rel={:.3e} fit={:.3e}",
        af_distance(&clean, &ambiguity_map(&x1)).unwrap(),
        masked_fit(&x1, &masked, &mask)
    );

    // variant B/C: anneal variations from the aligned restart
    let aligned = project_to_support(&align_residue_phases(&x1, stride, &spec), &spec);
    for (label, mu0, batch, iters) in [
        ("mu0=2    ", 2.0, None, 40_000usize),
        ("mu0=5    ", 5.0, None, 40_000),
        ("Q=32     ", 0.5, Some(32usize), 40_000),
    ] {
        let cfg = SolverConfig { mu0, batch, max_iters: iters, seed, ..SolverConfig::default() };
        let out = run_recovery(&noisy, &solve_mask, &aligned, &cfg, Some(&truth)).unwrap();
        println!(
            "{label}: rel={:.3e} fit={:.3e}",
            af_distance(&clean, &ambiguity_map(&out.signal)).unwrap(),
            masked_fit(&out.signal, &masked, &mask)
        );
    }

    // variant A: basin-hopping with fit-based acceptance
    let mut current = x1.clone();
    let mut current_fit = masked_fit(&current, &masked, &mask);
    let short = SolverConfig { mu0: 0.5, max_iters: 3000, seed, ..SolverConfig::default() };
    for round in 0..4u64 {
        let base = project_to_support(&align_residue_phases(&current, stride, &spec), &spec);
        let mut best: Option<(f64, ComplexSignal)> = None;
        for k in 0..6u64 {
            let candidate = perturb(&base, 0.35, seed ^ (round << 8) ^ k, &spec);
            let out = run_recovery(&noisy, &solve_mask, &candidate, &short, Some(&truth))
                .unwrap();
            let fit = masked_fit(&out.signal, &masked, &mask);
            if best.as_ref().is_none_or(|(bf, _)| fit < *bf) {
                best = Some((fit, out.signal));
            }
        }
        let (best_fit, best_sig) = best.unwrap();
        println!(
            "hop round {round}: candidate fit={best_fit:.3e} (current {current_fit:.3e})"
        );
        if best_fit < current_fit {
            current = best_sig;
            current_fit = best_fit;
        }
    }
    let out = run_recovery(&noisy, &solve_mask, &current, &full, Some(&truth)).unwrap();
    println!(
        "hop final : rel={:.3e} fit={:.3e} dist={:.3e}",
        af_distance(&clean, &ambiguity_map(&out.signal)).unwrap(),
        masked_fit(&out.signal, &masked, &mask),
        signal_distance(&truth, &out.signal).unwrap()
    );
}
