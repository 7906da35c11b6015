use std::sync::Arc;
use std::time::Instant;
use rps_core::assembly::Discretization;
use rps_core::coeff::{sample, CoeffSpec};
use rps_core::mesh::{build_structured, refine};
use rps_core::rps::{BasisSolver, Layers};
use rps_core::solver::SolverOpts;

fn main() {
    let t0 = Instant::now();
    let coarse = Arc::new(build_structured(2, 16).unwrap());
    let fine = refine(&coarse, 3);
    println!("mesh: {:?}", t0.elapsed());
    let t = Instant::now();
    let coeffs = sample(&CoeffSpec::TrigMultiscale2d, &fine).unwrap();
    println!("sample: {:?}", t.elapsed());
    let t = Instant::now();
    let disc = Discretization::build(coarse, fine, coeffs).unwrap();
    println!("disc: {:?}", t.elapsed());
    let solver = BasisSolver::new(&disc, SolverOpts::default());
    let t = Instant::now();
    let phi = solver.solve_node(112, Layers::Global).unwrap();
    println!("global solve: {:?} objective {}", t.elapsed(), phi.objective);
    let t = Instant::now();
    let phi = solver.solve_node(112, Layers::Local(3)).unwrap();
    println!("l=3 solve: {:?} objective {}", t.elapsed(), phi.objective);
    let t = Instant::now();
    let phi = solver.solve_node(112, Layers::Local(6)).unwrap();
    println!("l=6 solve: {:?} objective {}", t.elapsed(), phi.objective);
}
