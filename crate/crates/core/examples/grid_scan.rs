//! Scan dataset seeds for the linear unmixing experiment: generate the
//! correlated 4x4 grid, mix it with a random well-conditioned linear map,
//! train the axis-alignment criterion and both baselines, and print the
//! resulting metrics per seed.
//!
//!     cargo run --release -p gridalign-core --example grid_scan -- [--full] [seeds...]

use gridalign_core::baselines::{fastica_fit, hfs_fit, whiten_apply, whiten_fit, IcaNonlinearity};
use gridalign_core::eval::{
    alignment_index, detect_thresholds, match_and_score, null_agreement, DetectParams,
};
use gridalign_core::rng;
use gridalign_core::synth::{
    boost_diagonal, make_grid_spec, pearson_correlation, sample_latents, DiffeoSpec,
};
use gridalign_core::train::{standardize, train_linear, TrainConfig};
use ndarray::Array2;

fn min_gap(edges: &[f64]) -> f64 {
    edges
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
}

fn cells_to_array(spec: &gridalign_core::GridSpec, z: &Array2<f64>) -> Array2<usize> {
    spec.cells_of(z).unwrap()
}

fn eval_codes(
    codes: &Array2<f64>,
    true_cells: &Array2<usize>,
    k: &[usize],
    seed: u64,
) -> (f64, f64, String) {
    let std_codes = standardize(codes).unwrap().data;
    match detect_thresholds(&std_codes, k, &DetectParams::with_seed(seed)) {
        Ok(det) => {
            let pred = {
                let n = std_codes.nrows();
                let mut cells = Array2::zeros((n, k.len()));
                for i in 0..n {
                    let c = gridalign_core::grid::cell_index(
                        std_codes.row(i).as_slice().unwrap(),
                        &det.coordination,
                    )
                    .unwrap();
                    for (o, &v) in cells.row_mut(i).iter_mut().zip(c.indices()) {
                        *o = v;
                    }
                }
                cells
            };
            let m = match_and_score(true_cells, &pred, k, k).unwrap();
            let null = null_agreement(true_cells, &pred, k, k, 5, seed + 1).unwrap();
            (m.agreement, null, String::new())
        }
        Err(e) => (0.0, 0.0, format!("{e}")),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let full = args.iter().any(|a| a == "--full");
    let factor: f64 = std::env::var("BOOST").map_or(6.0, |v| v.parse().unwrap());
    let seeds: Vec<u64> = args
        .iter()
        .filter(|a| !a.starts_with("--"))
        .map(|a| a.parse().unwrap())
        .collect();
    let seeds = if seeds.is_empty() {
        (1..=30).collect()
    } else {
        seeds
    };

    for seed in seeds {
        let t0 = std::time::Instant::now();
        let spec = boost_diagonal(
            &make_grid_spec(2, &[4, 4], &[[0.0, 4.0], [0.0, 4.0]], rng::derive(seed, "grid", 0))
                .unwrap(),
            factor,
        )
        .unwrap();
        let z = sample_latents(&spec, 50_000, rng::derive(seed, "samples", 0)).unwrap();
        let rho = pearson_correlation(&z.column(0).to_vec(), &z.column(1).to_vec());
        let gaps: Vec<f64> = (0..2)
            .map(|j| {
                let t = spec.coordination.axis(j).values();
                let mut edges = vec![spec.ranges[j][0]];
                edges.extend_from_slice(t);
                edges.push(spec.ranges[j][1]);
                min_gap(&edges)
            })
            .collect();
        let true_cells = cells_to_array(&spec, &z);

        print!(
            "seed {seed:>3}: rho={rho:+.3} gaps=({:.2},{:.2})",
            gaps[0], gaps[1]
        );
        if !full {
            // quick null estimate from the true cells against themselves
            let null = null_agreement(&true_cells, &true_cells, &[3, 3], &[3, 3], 3, seed).unwrap();
            println!(" null~{null:.3}  [{:?}]", t0.elapsed());
            continue;
        }

        let mix = DiffeoSpec::random_linear(2, 100.0, &mut rng::derived(seed, "mix", 0));
        let x = mix.apply_forward(&z).unwrap();
        let mix_matrix = match &mix {
            DiffeoSpec::Linear { matrix } => matrix.clone(),
            _ => unreachable!(),
        };

        // gridalign
        let cfg = TrainConfig::with_seed(rng::derive(seed, "train", 0));
        let trace = train_linear(&x, &cfg, 2).unwrap();
        let ga_align = alignment_index(&trace.model.w, &mix_matrix).unwrap();
        let codes = trace.model.apply(&x).unwrap();
        let (ga_agree, ga_null, ga_err) = eval_codes(&codes, &true_cells, &[3, 3], seed + 2);

        // fastica
        let wh = whiten_fit(&x, 2).unwrap();
        let xw = whiten_apply(&wh, &x).unwrap();
        let ica = fastica_fit(&xw, IcaNonlinearity::Tanh, 1e-6, 500, rng::derive(seed, "ica", 0))
            .unwrap();
        let ica_w = ica.rotation.dot(&wh.matrix);
        let ica_align = alignment_index(&ica_w, &mix_matrix).unwrap();
        let ica_codes = ica.apply(&xw);
        let (ica_agree, _, ica_err) = eval_codes(&ica_codes, &true_cells, &[3, 3], seed + 3);

        // hfs
        let mut hfs_cfg = TrainConfig::with_seed(rng::derive(seed, "hfs", 0));
        hfs_cfg.learning_rate = 1e-4;
        hfs_cfg.momentum = 0.0;
        let hfs_trace = hfs_fit(&x, &hfs_cfg, 2).unwrap();
        let hfs_align = alignment_index(&hfs_trace.model.w, &mix_matrix).unwrap();
        let hfs_codes = hfs_trace.model.apply(&x).unwrap();
        let (hfs_agree, _, hfs_err) = eval_codes(&hfs_codes, &true_cells, &[3, 3], seed + 4);

        println!(
            "\n  gridalign: loss={:.4} epochs={} align={ga_align:.3} agree={ga_agree:.3} null={ga_null:.3} {ga_err}",
            trace.best_loss, trace.epochs_run
        );
        println!("  fastica:   align={ica_align:.3} agree={ica_agree:.3} conv={} {ica_err}", ica.converged);
        println!(
            "  hfs:       loss={:.5} epochs={} align={hfs_align:.3} agree={hfs_agree:.3} {hfs_err}",
            hfs_trace.best_loss, hfs_trace.epochs_run
        );
        println!("  [{:?}]", t0.elapsed());
    }
}
