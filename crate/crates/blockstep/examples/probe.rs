use blockstep::model::{BlockStructure, HyperbolicSystem, StateSnapshot};
use blockstep::grid::Grid;
use blockstep::sim::{simulate, ControlMode, SimSettings};
use nalgebra::{DMatrix, DVector};

fn main() {
    let blocks = BlockStructure::new(vec![1], vec![1.0]).unwrap();
    let m1 = |v: f64| DMatrix::from_element(1, 1, v);
    let sys = HyperbolicSystem {
        sigma_plus: DVector::from_element(1, 1.0),
        blocks,
        lambda_pp: m1(0.0), lambda_pm: m1(0.0), lambda_mm: m1(0.0), lambda_mp: m1(0.0),
        pi_p: m1(0.0), pi_m: m1(0.0),
        f_pp: m1(0.0), f_pm: m1(0.0), f_mp: m1(0.0), f_mm: m1(0.0),
        a: m1(2.0), b: m1(0.0), c: m1(1.0), d: m1(0.0),
    };
    let g = 50;
    let grid = Grid::new(g).unwrap();
    let mut init = StateSnapshot::zeros(grid, 1, 1, 1);
    init.x[0] = 1.0;
    let st = SimSettings::new(g, 0.5, 10.0, ControlMode::Open, 100).unwrap();
    let tr = simulate(&sys, None, &init, &st).unwrap();
    for s in tr.snapshots.iter().step_by(3) {
        println!("t = {:.2} x = {:.4e}", s.t, s.x[0]);
    }
}
