//! Evaluate the axis-alignment loss along one-parameter families of
//! codes: rotations of the standardized true latents, and anisotropic
//! per-axis scalings, at a fixed kernel bandwidth.
//!
//!     cargo run --release -p gridalign-core --example loss_landscape -- <data_seed>

use gridalign_core::criterion::loss_grad_axis;
use gridalign_core::rng;
use gridalign_core::synth::{boost_diagonal, make_grid_spec, sample_latents};
use gridalign_core::train::standardize;
use ndarray::Array2;

fn main() {
    let data_seed: u64 = std::env::args().nth(1).map_or(48, |a| a.parse().unwrap());
    let boost: f64 = std::env::var("BOOST").map_or(6.0, |v| v.parse().unwrap());
    let spec = boost_diagonal(
        &make_grid_spec(
            2,
            &[4, 4],
            &[[0.0, 4.0], [0.0, 4.0]],
            rng::derive(data_seed, "grid", 0),
        )
        .unwrap(),
        boost,
    )
    .unwrap();
    let z = sample_latents(&spec, 5000, rng::derive(data_seed, "samples", 0)).unwrap();
    let zs = standardize(&z).unwrap().data;

    println!("angle sweep (degrees -> loss):");
    for deg in (0..=90).step_by(3) {
        let th = (deg as f64).to_radians();
        let rot = ndarray::array![[th.cos(), -th.sin()], [th.sin(), th.cos()]];
        let codes = zs.dot(&rot.t());
        let lv = loss_grad_axis(&codes, 0.1).unwrap();
        println!("  {deg:>3} deg: {:.5}", lv.value);
    }

    println!("anisotropy sweep at 0 degrees (scale of axis 1 -> loss):");
    for &a in &[0.3, 0.5, 0.7, 1.0, 1.5, 2.0, 3.0, 5.0, 8.0] {
        let mut codes = zs.clone();
        codes.column_mut(1).mapv_inplace(|v| a * v);
        let lv = loss_grad_axis(&codes, 0.1).unwrap();
        println!("  a={a:>4}: {:.5}", lv.value);
    }

    println!("anisotropy sweep at 15 degrees:");
    let th = 15.0f64.to_radians();
    let rot = ndarray::array![[th.cos(), -th.sin()], [th.sin(), th.cos()]];
    let tilted = zs.dot(&rot.t());
    for &a in &[0.3, 0.5, 1.0, 2.0, 3.0, 5.0] {
        let mut codes = tilted.clone();
        codes.column_mut(1).mapv_inplace(|v| a * v);
        let lv = loss_grad_axis(&codes, 0.1).unwrap();
        println!("  a={a:>4}: {:.5}", lv.value);
    }

    println!("global scale sweep at 0 degrees (both axes scaled):");
    for &a in &[0.5, 1.0, 2.0, 3.0, 5.0] {
        let codes = zs.mapv(|v| a * v);
        let lv = loss_grad_axis(&codes, 0.1).unwrap();
        println!("  a={a:>4}: {:.5}", lv.value);
    }
}
