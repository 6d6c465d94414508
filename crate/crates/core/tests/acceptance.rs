//! End-to-end acceptance checks. Runs without the libtest harness and prints
//! one PASS/FAIL line per criterion.

use std::sync::OnceLock;
use std::time::Instant;

use acrom::diag::{l2l2_relative_error, principal_angle, subspace_cosines, DivergenceProjector};
use acrom::mesh::generate_reference_mesh;
use acrom::offline::{run_offline_with, FemSystem, FlowState, Forcing, OfflineConfig, SnapshotSet};
use acrom::pod::{compute_pod, pod_inverse_constant, projection_error_report, Field, PodBasis};
use acrom::rom::{build_reduced_model, dt_refinement_study, project_state, run_rom, RomConfig};
use acrom::sparse::SparseOperator;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 0.08;
const DESK_DT: f64 = 1e-2;
const DESK_T_END: f64 = 2.0;
const BASE_R: usize = 10;

struct Desk {
    system: FemSystem<f64>,
    set: SnapshotSet<f64>,
    u_basis: PodBasis<f64>,
    p_basis: PodBasis<f64>,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let system = FemSystem::new(generate_reference_mesh::<f64>(H).expect("mesh"));
        let config = OfflineConfig::new(DESK_DT, DESK_T_END);
        let set = run_offline_with(&system, &config, None).expect("offline run");
        let u_basis = compute_pod(&set, &system, Field::Velocity, 0).expect("velocity POD");
        let p_basis = compute_pod(&set, &system, Field::Pressure, 0).expect("pressure POD");
        let u_basis = compute_pod(&set, &system, Field::Velocity, u_basis.rank).expect("velocity POD");
        let p_basis = compute_pod(&set, &system, Field::Pressure, p_basis.rank).expect("pressure POD");
        Desk {
            system,
            set,
            u_basis,
            p_basis,
        }
    })
}

fn bases(r: usize, m: usize) -> (PodBasis<f64>, PodBasis<f64>) {
    let d = desk();
    (d.u_basis.truncate(r).unwrap(), d.p_basis.truncate(m).unwrap())
}

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen::<f64>() - 0.5).collect()
}

fn energy_identity() -> Outcome {
    let d = desk();
    let fom = d.set.energy_residuals.iter().cloned().fold(0.0, f64::max);
    let (ub, pb) = bases(BASE_R, BASE_R);
    let model = build_reduced_model(&ub, &pb, &d.system, &RomConfig::new(DESK_DT)).map_err(|e| e.to_string())?;
    let init = FlowState::zeros(d.system.n_u(), d.system.n_p());
    let (a_u, a_p) = project_state(&ub, &pb, &init).map_err(|e| e.to_string())?;
    let traj = run_rom(&model, a_u, a_p, 0.0, 200).map_err(|e| e.to_string())?;
    let rom = traj.max_energy_residual();
    check(
        d.set.energy_residuals.len() == 200 && fom <= 1e-10 && rom <= 1e-10,
        format!("200 steps, max residual full {fom:.2e}, reduced {rom:.2e}"),
    )
}

fn nonincreasing(energy: &[f64]) -> bool {
    energy.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12))
}

fn unconditional_stability() -> Outcome {
    let d = desk();
    let eps = acrom::offline::DEFAULT_EPS;
    let start = d.set.final_state.clone();
    let (ub, pb) = bases(BASE_R, BASE_R);
    let mut rom_config = RomConfig::new(DESK_DT);
    rom_config.forcing = Forcing::Zero;
    let model = build_reduced_model(&ub, &pb, &d.system, &rom_config).map_err(|e| e.to_string())?;
    let (a_u, a_p) = project_state(&ub, &pb, &start).map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    let mut ok = true;
    for (dt, steps) in [(1e-1, 10usize), (1e-2, 20), (1e-3, 20)] {
        let mut config = OfflineConfig::new(dt, dt * steps as f64);
        config.forcing = Forcing::Zero;
        let run = run_offline_with(&d.system, &config, Some(start.clone())).map_err(|e| e.to_string())?;
        let full: Vec<f64> = run
            .velocity
            .iter()
            .zip(&run.pressure)
            .map(|(u, p)| d.system.mass.quadratic(u) + eps * d.system.pressure_mass.quadratic(p))
            .collect();
        let traj = run_rom(&model.with_dt(dt), a_u.clone(), a_p.clone(), 0.0, steps).map_err(|e| e.to_string())?;
        let reduced: Vec<f64> = traj
            .a_u
            .iter()
            .zip(&traj.a_p)
            .map(|(u, p)| u.iter().map(|v| v * v).sum::<f64>() + eps * p.iter().map(|v| v * v).sum::<f64>())
            .collect();
        let good = full.len() == steps + 1 && nonincreasing(&full) && nonincreasing(&reduced);
        ok &= good;
        notes.push(format!(
            "dt={dt:e}: full {:.3e}->{:.3e}, reduced {:.3e}->{:.3e}",
            full[0],
            full[full.len() - 1],
            reduced[0],
            reduced[reduced.len() - 1]
        ));
    }
    check(ok, notes.join("; "))
}

fn pod_identities() -> Outcome {
    let d = desk();
    let a_u = d.set.velocity_matrix();
    let a_p = d.set.pressure_matrix();
    let full_u = d.u_basis.rank;
    let full_p = d.p_basis.rank;
    let mut worst = 0.0f64;
    for (r_u, r_p) in [(0, 0), (5, 5), (full_u, full_p)] {
        let complete = r_u == full_u;
        let ub = d.u_basis.truncate(r_u).unwrap();
        let pb = d.p_basis.truncate(r_p).unwrap();
        let ru = projection_error_report(&ub, &a_u, Some(&d.system.stiffness)).map_err(|e| e.to_string())?;
        let rp = projection_error_report(&pb, &a_p, None).map_err(|e| e.to_string())?;
        let h1 = if complete {
            (ru.h1_measured().unwrap() - ru.h1_tail.unwrap()).abs() / ru.h1_total.unwrap()
        } else {
            ru.h1_mismatch().unwrap()
        };
        let l2 = if complete {
            ru.l2_mismatch_vs_total()
        } else {
            ru.l2_mismatch()
        };
        let lp = if complete {
            rp.l2_mismatch_vs_total()
        } else {
            rp.l2_mismatch()
        };
        worst = worst.max(l2).max(h1).max(lp);
    }
    check(
        worst <= 1e-8,
        format!("R in {{0, 5, {full_u}/{full_p}}}, worst relative mismatch {worst:.2e}"),
    )
}

fn orthonormality_and_inverse() -> Outcome {
    let d = desk();
    let defect = d.u_basis.orthonormality_defect().max(d.p_basis.orthonormality_defect());
    let s = pod_inverse_constant(&d.u_basis, &d.system.stiffness);
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let c = random_vec(d.u_basis.r(), &mut rng);
        let v = d.u_basis.reconstruct(&c);
        let grad = d.system.stiffness.quadratic(&v).sqrt();
        let l2 = d.system.mass.quadratic(&v).sqrt();
        worst = worst.max(grad / (s.sqrt() * l2));
    }
    check(
        defect <= 1e-10 && worst <= 1.0 + 1e-10,
        format!(
            "R={}, M={}, orthonormality defect {defect:.2e}, max ratio to the bound {worst:.6}",
            d.u_basis.r(),
            d.p_basis.r()
        ),
    )
}

fn relative_form(n: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let nv = n * v;
    let denom = v.norm() * nv.norm();
    if denom == 0.0 {
        0.0
    } else {
        v.dot(&nv).abs() / denom
    }
}

fn skew_symmetry() -> Outcome {
    let d = desk();
    let sys = &d.system;
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut full = 0.0f64;
    for _ in 0..100 {
        let mut w = random_vec(sys.n_u(), &mut rng);
        let mut v = random_vec(sys.n_u(), &mut rng);
        sys.dofs.zero_dirichlet(&mut w);
        sys.dofs.zero_dirichlet(&mut v);
        let n = sys.assembler.convection(&w).map_err(|e| e.to_string())?;
        let nv = n.mul_vec(&v);
        let num: f64 = v.iter().zip(&nv).map(|(a, b)| a * b).sum();
        let den = v.iter().map(|x| x * x).sum::<f64>().sqrt() * nv.iter().map(|x| x * x).sum::<f64>().sqrt();
        full = full.max(num.abs() / den);
    }
    let (ub, pb) = bases(BASE_R, BASE_R);
    let model = build_reduced_model(&ub, &pb, sys, &RomConfig::new(DESK_DT)).map_err(|e| e.to_string())?;
    let mut reduced = 0.0f64;
    for _ in 0..100 {
        let w = random_vec(model.r(), &mut rng);
        let v = DVector::from_vec(random_vec(model.r(), &mut rng));
        reduced = reduced.max(relative_form(&model.convection(&w), &v));
    }
    check(
        full <= 1e-12 && reduced <= 1e-12,
        format!("100 pairs, max relative |v^T N(w) v| full {full:.2e}, reduced {reduced:.2e}"),
    )
}

fn first_order_convergence() -> Outcome {
    let d = desk();
    let window = 0.256;
    let t0 = DESK_T_END;
    let mut config = OfflineConfig::new(2.5e-4, t0 + window);
    config.t_start = t0;
    let reference = run_offline_with(&d.system, &config, Some(d.set.final_state.clone())).map_err(|e| e.to_string())?;
    let r_u = compute_pod(&reference, &d.system, Field::Velocity, 0)
        .map_err(|e| e.to_string())?
        .rank;
    let r_p = compute_pod(&reference, &d.system, Field::Pressure, 0)
        .map_err(|e| e.to_string())?
        .rank;
    let r = 50.min(r_u).min(r_p);
    let ub = compute_pod(&reference, &d.system, Field::Velocity, r).map_err(|e| e.to_string())?;
    let pb = compute_pod(&reference, &d.system, Field::Pressure, r).map_err(|e| e.to_string())?;
    let model = build_reduced_model(&ub, &pb, &d.system, &RomConfig::new(1e-3)).map_err(|e| e.to_string())?;
    let dts = [8e-3, 4e-3, 2e-3, 1e-3];
    let report = dt_refinement_study(&model, &ub, &pb, (&reference).into(), (t0, t0 + window), &dts)
        .map_err(|e| e.to_string())?;
    let in_band = |o: Option<f64>| o.is_some_and(|o| (0.8..=1.2).contains(&o));
    check(
        in_band(report.velocity_order) && in_band(report.pressure_order),
        format!(
            "R=M={r}, window [{t0}, {:.3}], velocity order {:.3}, pressure order {:.3}, errors u {:?} p {:?}",
            t0 + window,
            report.velocity_order.unwrap_or(f64::NAN),
            report.pressure_order.unwrap_or(f64::NAN),
            report
                .velocity_errors
                .iter()
                .map(|e| format!("{e:.2e}"))
                .collect::<Vec<_>>(),
            report
                .pressure_errors
                .iter()
                .map(|e| format!("{e:.2e}"))
                .collect::<Vec<_>>()
        ),
    )
}

fn spd_weight(n: usize, rng: &mut ChaCha8Rng) -> SparseOperator<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
    SparseOperator::from_dense(&(a.transpose() * &a + DMatrix::identity(n, n) * 0.5))
}

/// `||P_Y x||_W / ||x||_W` with the projection from the normal equations.
fn projected_ratio(x: &DVector<f64>, y: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let gram = y.transpose() * w * y;
    let rhs = y.transpose() * w * x;
    let coef = gram.lu().solve(&rhs).expect("independent columns");
    let proj2 = rhs.dot(&coef);
    (proj2.max(0.0) / (x.transpose() * w * x)[(0, 0)]).sqrt()
}

fn sphere_point(angles: &[f64]) -> DVector<f64> {
    let mut c = vec![1.0; angles.len() + 1];
    for (i, &a) in angles.iter().enumerate() {
        for (j, cj) in c.iter_mut().enumerate() {
            if j < i + 1 {
                *cj *= a.sin();
            } else if j == i + 1 {
                *cj *= a.cos();
            }
        }
    }
    DVector::from_vec(c)
}

/// Grid search over the coefficient sphere of `span X` followed by repeated
/// local zooms around the best candidates.
fn brute_force_cosine(x: &DMatrix<f64>, y: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let k = x.ncols();
    let f = |angles: &[f64]| projected_ratio(&(x * sphere_point(angles)), y, w);
    if k == 1 {
        return projected_ratio(&x.column(0).into_owned(), y, w);
    }
    let dims = k - 1;
    let grid = if dims == 1 { 720 } else { 90 };
    let step = std::f64::consts::PI / grid as f64;
    let mut candidates: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut idx = vec![0usize; dims];
    loop {
        let a: Vec<f64> = idx.iter().map(|&i| i as f64 * step).collect();
        candidates.push((f(&a), a));
        let mut d = 0;
        while d < dims {
            idx[d] += 1;
            if idx[d] < grid {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == dims {
            break;
        }
    }
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut best = candidates[0].0;
    for (mut value, mut center) in candidates.into_iter().take(6) {
        let mut span = step;
        for _ in 0..60 {
            let mut improved = false;
            for d in 0..dims {
                for s in [-span, span] {
                    let mut trial = center.clone();
                    trial[d] += s;
                    let v = f(&trial);
                    if v > value {
                        value = v;
                        center = trial;
                        improved = true;
                    }
                }
            }
            if !improved {
                span *= 0.5;
            }
        }
        best = best.max(value);
    }
    best
}

fn weight_orthonormal(x: &DMatrix<f64>, w: &SparseOperator<f64>) -> DMatrix<f64> {
    let gram = x.transpose() * w.mul_dense(x);
    let l = gram.cholesky().expect("independent columns").unpack();
    let linv_t = l.try_inverse().expect("invertible factor").transpose();
    x * linv_t
}

fn principal_angle_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(4..10);
        let k = rng.gen_range(1..=3.min(n - 1));
        let l = rng.gen_range(1..=(n - k).min(4));
        let w = spd_weight(n, &mut rng);
        let x = DMatrix::from_fn(n, k, |_, _| rng.gen::<f64>() - 0.5);
        let y = DMatrix::from_fn(n, l, |_, _| rng.gen::<f64>() - 0.5);
        let alpha = subspace_cosines(&x, &y, &w)[0];
        let brute = brute_force_cosine(&x, &y, &w.to_dense());
        worst = worst.max((alpha - brute).abs());
    }

    let d = desk();
    let sys = &d.system;
    let (ub, _) = bases(BASE_R, BASE_R);
    let lu_div = DivergenceProjector::new(sys).map_err(|e| e.to_string())?;
    let mut div = DMatrix::zeros(sys.n_p(), ub.r());
    for j in 0..ub.r() {
        let dj = lu_div.apply(&ub.mode(j)).map_err(|e| e.to_string())?;
        div.column_mut(j).copy_from_slice(&dj);
    }
    let same = PodBasis::from_modes(
        Field::Pressure,
        weight_orthonormal(&div, &sys.pressure_mass),
        &sys.pressure_mass,
    );
    let identical = principal_angle(&ub, &same, sys).map_err(|e| e.to_string())?.alpha;

    let q = weight_orthonormal(&div, &sys.pressure_mass);
    let raw = DMatrix::from_fn(sys.n_p(), 4, |_, _| rng.gen::<f64>() - 0.5);
    let coords = q.transpose() * sys.pressure_mass.mul_dense(&raw);
    let orth = weight_orthonormal(&(&raw - &q * coords), &sys.pressure_mass);
    let other = PodBasis::from_modes(Field::Pressure, orth, &sys.pressure_mass);
    let orthogonal = principal_angle(&ub, &other, sys).map_err(|e| e.to_string())?.alpha;

    check(
        worst <= 1e-6 && (identical - 1.0).abs() <= 1e-12 && orthogonal.abs() <= 1e-12,
        format!(
            "100 random instances, max |alpha - brute force| {worst:.2e}; identical {identical:.15}, orthogonal {orthogonal:.2e}"
        ),
    )
}

fn cbs_bound() -> Outcome {
    let d = desk();
    let sys = &d.system;
    let (ub, pb) = bases(BASE_R, BASE_R);
    let alpha = principal_angle(&ub, &pb, sys).map_err(|e| e.to_string())?.alpha;
    let proj = DivergenceProjector::new(sys).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let psis: Vec<(Vec<f64>, f64)> = (0..100)
        .map(|_| {
            let c = random_vec(pb.r(), &mut rng);
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            (pb.reconstruct(&c), norm)
        })
        .collect();
    let mut worst = f64::NEG_INFINITY;
    for u in &d.set.velocity {
        let mu = DVector::from_vec(sys.mass.mul_vec(u));
        let coords = ub.modes.transpose() * mu;
        let pu = ub.reconstruct(coords.as_slice());
        let bu = sys.divergence.mul_vec(&pu);
        let dnorm = proj.norm(&pu).map_err(|e| e.to_string())?;
        for (psi, psi_norm) in &psis {
            let lhs: f64 = psi.iter().zip(&bu).map(|(a, b)| a * b).sum::<f64>().abs();
            worst = worst.max(lhs - alpha * dnorm * psi_norm);
        }
    }
    check(
        worst <= 1e-10,
        format!(
            "alpha {alpha:.12}, {} snapshots x 100 psi, max violation {worst:.2e}",
            d.set.n_snapshots()
        ),
    )
}

fn rom_fidelity() -> Outcome {
    let d = desk();
    let sys = &d.system;
    let r999 = d.u_basis.modes_for_energy(0.999);
    let mut ladder = vec![3usize, 5, 7, 15];
    if !ladder.contains(&r999) {
        ladder.push(r999);
        ladder.sort_unstable();
    }
    let init = FlowState::zeros(sys.n_u(), sys.n_p());
    let mut errors = Vec::new();
    for &r in &ladder {
        let (ub, pb) = bases(r, r);
        let model = build_reduced_model(&ub, &pb, sys, &RomConfig::new(DESK_DT)).map_err(|e| e.to_string())?;
        let (a_u, a_p) = project_state(&ub, &pb, &init).map_err(|e| e.to_string())?;
        let traj = run_rom(&model, a_u, a_p, 0.0, d.set.energy_residuals.len()).map_err(|e| e.to_string())?;
        let err = l2l2_relative_error(
            &traj.times,
            &traj.reconstruct_velocity(&ub),
            &d.set.times,
            &d.set.velocity,
            &sys.mass,
        )
        .map_err(|e| e.to_string())?;
        errors.push((r, err.value));
    }
    let pinned: Vec<f64> = errors
        .iter()
        .filter(|(r, _)| [3, 5, 7, 15].contains(r))
        .map(|e| e.1)
        .collect();
    let monotone = pinned.windows(2).all(|w| w[1] <= w[0]);
    let at_999 = errors.iter().find(|e| e.0 == r999).unwrap().1;
    check(
        monotone && at_999 < 0.05,
        format!(
            "errors {}; 99.9% energy at R={r999}",
            errors
                .iter()
                .map(|(r, e)| format!("R={r}: {e:.3e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn non_solenoidal_snapshots() -> Outcome {
    let d = desk();
    let proj = DivergenceProjector::new(&d.system).map_err(|e| e.to_string())?;
    let mut largest = 0.0f64;
    for u in &d.set.velocity {
        largest = largest.max(proj.norm(u).map_err(|e| e.to_string())?);
    }
    let (ub, pb) = bases(BASE_R, BASE_R);
    let model = build_reduced_model(&ub, &pb, &d.system, &RomConfig::new(DESK_DT)).map_err(|e| e.to_string())?;
    let (a_u, a_p) = project_state(&ub, &pb, &d.set.final_state).map_err(|e| e.to_string())?;
    let traj = run_rom(&model, a_u, a_p, DESK_T_END, 10).map_err(|e| e.to_string())?;
    check(
        largest > 1e-6 && traj.len() == 11,
        format!("largest snapshot divergence norm {largest:.3e}; reduced model built and ran"),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let criteria: [Criterion; 10] = [
        ("energy identity", energy_identity),
        ("unconditional stability", unconditional_stability),
        ("POD projection identities", pod_identities),
        ("POD orthonormality and inverse estimate", orthonormality_and_inverse),
        ("skew-symmetric convection", skew_symmetry),
        ("first-order time convergence", first_order_convergence),
        ("principal angle correctness", principal_angle_correctness),
        ("strengthened CBS bound", cbs_bound),
        ("reduced model fidelity", rom_fidelity),
        ("non-solenoidal snapshots", non_solenoidal_snapshots),
    ];
    let clock = Instant::now();
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL {:>2} {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failures} failed in {:.1}s",
        criteria.len() - failures,
        clock.elapsed().as_secs_f64()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
