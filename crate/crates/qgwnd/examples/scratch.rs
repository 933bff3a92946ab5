use num_complex::Complex64 as C64;
use qgwnd::coupling::{CouplingKind, VertexCoupling};
use qgwnd::graph::MetricGraph;
use qgwnd::mesh::{discretize, lp_norm, GridFunction};
use qgwnd::operator::{assemble, eigendecompose};
use qgwnd::propagation::PropagatorContext;
use qgwnd::dynamics::*;
use qgwnd::harness::fit_line;
use std::sync::Arc;
use std::time::Instant;

fn main() {
    let g = Arc::new(MetricGraph::star(3).unwrap());
    let mesh = Arc::new(discretize(&g, 0.1, 10.0).unwrap());
    let c = VertexCoupling::standard(CouplingKind::Kirchhoff, 3).unwrap();
    let op = Arc::new(assemble(&mesh, vec![c]).unwrap());
    let sd = Arc::new(eigendecompose(&op).unwrap());
    let ctx = PropagatorContext::new(op, sd);
    let x0 = ctx.decomp.project_constrained(&GridFunction::gaussian_bump(&ctx.op.mesh, 0, 3.0, 1.0, 1.3, 0.0));
    let t_final = 0.25;
    let n_ref = 1024usize;
    let beta = brownian_path(t_final, t_final / n_ref as f64, 0.0, 7);
    let cfg0 = SolverConfig {
        t_final, dt: t_final / n_ref as f64,
        truncation: Truncation::Pointwise { radius: 4.0 },
        save_every: 1, ..Default::default()
    };
    let t0 = Instant::now();
    let driver_ref: Vec<f64> = (0..=n_ref).map(|j| beta.value(j as f64 * cfg0.dt).unwrap()).collect();
    let picard = picard_solve(&ctx, &x0, &driver_ref, &cfg0, 1e-11, 200).unwrap();
    println!("picard reference took {:?}", t0.elapsed());
    let mut errs = Vec::new();
    let mut dts = Vec::new();
    for &n in &[64usize, 128, 256] {
        let dt = t_final / n as f64;
        let cfg = SolverConfig { dt, save_every: 1, ..cfg0 };
        let traj = solve_wnd(&ctx, &x0, &cfg, &beta).unwrap();
        // sup over the coarse grid of the L2 difference vs picard
        let stride = n_ref / n;
        let mut sup = 0.0f64;
        for (j, f) in traj.fields.iter() {
            let pf = picard.field_at_step(j * stride).unwrap();
            sup = sup.max(lp_norm(&f.sub(pf), 2.0));
        }
        errs.push(sup);
        dts.push(dt);
        println!("dt=T/{n}: sup-t L2 diff {sup:.4e}");
    }
    let lx: Vec<f64> = dts.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|v| v.ln()).collect();
    let fit = fit_line(&lx, &ly).unwrap();
    println!("observed order: {:.3}", fit.slope);
}
