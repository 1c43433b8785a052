//! Finite-difference certification of the hand-written backward passes:
//! first a small graph built by hand, then every model cell.
//!
//! ```sh
//! cargo run --release --example gradient_check [seed]
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qgen::models::certify::{cell_name, cells, certify, COORDS_PER_PARAM};
use qgen::tensor::{grad_check, GradCheckConfig, Graph, ParamStore, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(2), |s| s.parse())?;

    // loss = sum(log softmax(tanh(x W + b)) picked at the targets)
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::uniform(&[4, 3], 1.0, &mut rng));
    let b = store.add("b", Tensor::uniform(&[1, 3], 1.0, &mut rng));
    let x = Tensor::uniform(&[5, 4], 1.0, &mut rng);
    let report = grad_check(
        &mut store,
        |params| {
            let mut g = Graph::new(params);
            let xs = g.constant(x.clone());
            let h = g.linear(xs, w, Some(b))?;
            let h = g.tanh(h);
            let lp = g.log_softmax_rows(h)?;
            let picked = g.pick_rows(lp, &[0, 2, 1, 1, 0])?;
            let loss = g.sum(picked);
            let grads = g.backward(loss)?;
            Ok((g.value(loss).data()[0], grads.into_dense(params)))
        },
        &GradCheckConfig::default(),
    )?;
    println!("hand-built graph: max relative error {:.2e}, passed {}", report.max_rel_error, report.passed);

    println!("\nmodel cells, seed {seed}, {COORDS_PER_PARAM} coordinates per tensor");
    let mut failures = 0;
    for cfg in cells(8) {
        let r = certify(&cfg, seed)?;
        let worst = r.worst_param().expect("parameters");
        println!(
            "{:<38} {:>3} tensors  max rel err {:.2e} ({})  {}",
            cell_name(&cfg),
            r.params.len(),
            r.max_rel_error,
            worst.name,
            if r.passed { "ok" } else { "FAIL" }
        );
        failures += usize::from(!r.passed);
    }
    println!("{failures} cells failed");
    Ok(())
}
