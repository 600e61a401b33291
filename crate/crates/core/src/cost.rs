//! Fidelity and error metrics over propagation results, each paired with an
//! exact gradient in the control amplitudes.
//!
//! All metrics report infidelities (minimization convention). Gradients are
//! assembled from the trace form `dCost = Re tr(W dU_total)` with per-step
//! derivative blocks: `dU_total/du_{l,k} = R_{l+2} D_{l,k} Q_l` in terms of
//! the record cumulants, so
//! `dCost/du_{l,k} = Re tr((Q_l W R_{l+2}) D_{l,k})`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{C64, Operator};
use crate::solver::{DerivativeBlocks, PropagationRecord};

/// Uhlmann state fidelity `[tr sqrt(sqrt(rho1) rho2 sqrt(rho1))]^2`.
///
/// Matrix square roots run through the Hermitian eigendecomposition with
/// negative eigenvalues clipped at `-1e-12`.
pub fn state_fidelity(rho1: &Operator, rho2: &Operator) -> Result<f64> {
    validate_density_matrix(rho1, "rho1")?;
    validate_density_matrix(rho2, "rho2")?;
    if rho1.dim() != rho2.dim() {
        return Err(Error::DimensionMismatch {
            context: "state_fidelity",
            expected: rho1.dim(),
            got: rho2.dim(),
        });
    }
    let sqrt1 = psd_sqrt(rho1);
    let inner = &(&sqrt1 * rho2) * &sqrt1;
    let (vals, _) = inner.eigh();
    let root_sum: f64 = vals.iter().map(|&v| clip_eigenvalue(v).sqrt()).sum();
    Ok(root_sum * root_sum)
}

fn clip_eigenvalue(v: f64) -> f64 {
    if v < 0.0 {
        0.0
    } else {
        v
    }
}

fn psd_sqrt(rho: &Operator) -> Operator {
    let (vals, vecs) = rho.eigh();
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&v| C64::new(clip_eigenvalue(v).sqrt(), 0.0)),
    ));
    Operator::new(vecs.data() * d * vecs.data().adjoint()).expect("square by construction")
}

fn validate_density_matrix(rho: &Operator, label: &str) -> Result<()> {
    let tol = 1e-8;
    if !rho.is_hermitian(tol) {
        return Err(Error::invalid(format!("{label} is not Hermitian")));
    }
    if (rho.trace().re - 1.0).abs() > tol || rho.trace().im.abs() > tol {
        return Err(Error::invalid(format!("{label} does not have unit trace")));
    }
    let (vals, _) = rho.eigh();
    if vals.iter().any(|&v| v < -1e-8) {
        return Err(Error::invalid(format!("{label} is not positive semidefinite")));
    }
    Ok(())
}

/// `1 - |tr(V^dag U)|^2 / d^2`; invariant under a global phase of either
/// argument.
pub fn entanglement_infidelity(u: &Operator, v: &Operator) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            context: "entanglement_infidelity",
            expected: v.dim(),
            got: u.dim(),
        });
    }
    let d = u.dim() as f64;
    let c = (&v.dagger() * u).trace();
    Ok(1.0 - c.norm_sqr() / (d * d))
}

/// Open-system generalization: `(1/d^2) tr((V^T (x) V^dag) U_s)` for a
/// superoperator `U_s` in the column-stacking convention. The imaginary
/// residue must vanish within 1e-10.
pub fn open_system_fidelity(v: &Operator, u_s: &Operator) -> Result<f64> {
    let d = v.dim();
    if u_s.dim() != d * d {
        return Err(Error::DimensionMismatch {
            context: "open_system_fidelity superoperator",
            expected: d * d,
            got: u_s.dim(),
        });
    }
    let w = v.transpose().kron(&v.dagger());
    let t = (&w * u_s).trace();
    let value = t.re / (d * d) as f64;
    if t.im.abs() / (d * d) as f64 > 1e-10 {
        return Err(Error::invalid(format!(
            "open-system fidelity has imaginary residue {}",
            t.im / (d * d) as f64
        )));
    }
    Ok(value)
}

/// Population lost out of the computational subspace, quantified as the
/// distance to unitarity of the projected propagator:
/// `1 - tr(U_c^dag U_c) / d_c`.
pub fn leakage_error(u_full: &Operator, comp_indices: &[usize]) -> Result<f64> {
    validate_subspace(u_full, comp_indices)?;
    let uc = project(u_full, comp_indices);
    let d = comp_indices.len() as f64;
    Ok(1.0 - (&uc.dagger() * &uc).trace().re / d)
}

fn validate_subspace(u_full: &Operator, comp_indices: &[usize]) -> Result<()> {
    if comp_indices.is_empty() {
        return Err(Error::invalid("computational subspace must be nonempty"));
    }
    if comp_indices.iter().any(|&i| i >= u_full.dim()) {
        return Err(Error::invalid("computational index out of range"));
    }
    let mut seen = vec![false; u_full.dim()];
    for &i in comp_indices {
        if seen[i] {
            return Err(Error::invalid("duplicate computational index"));
        }
        seen[i] = true;
    }
    Ok(())
}

fn project(u_full: &Operator, comp: &[usize]) -> Operator {
    let d = comp.len();
    let mut m = DMatrix::<C64>::zeros(d, d);
    for (i, &ri) in comp.iter().enumerate() {
        for (j, &cj) in comp.iter().enumerate() {
            m[(i, j)] = u_full.data()[(ri, cj)];
        }
    }
    Operator::new(m).expect("square by construction")
}

/// Weighted average entanglement infidelity over an ensemble of noisy
/// propagations. With `neglect_systematic` the reference gate is the
/// noiseless simulated propagator (which must then be supplied) instead of
/// the target.
pub fn noise_average_infidelity(
    records: &[PropagationRecord],
    target: &Operator,
    neglect_systematic: bool,
    noiseless: Option<&PropagationRecord>,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("need at least one propagation record"));
    }
    let total_weight: f64 = records.iter().map(|r| r.weight()).sum();
    if (total_weight - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "record weights must sum to 1, got {total_weight}"
        )));
    }
    let reference = if neglect_systematic {
        noiseless
            .ok_or_else(|| {
                Error::invalid("neglect_systematic_errors requires the noiseless record")
            })?
            .total()
            .clone()
    } else {
        target.clone()
    };
    let mut acc = 0.0;
    for rec in records {
        acc += rec.weight() * entanglement_infidelity(rec.total(), &reference)?;
    }
    Ok(acc)
}

/// Contract `dCost = Re tr(W dU_total)` against the derivative blocks and
/// cumulants; the result lives on the record's control grid (noise
/// oversampling substeps are folded back).
pub fn assemble_gradient(
    record: &PropagationRecord,
    blocks: &DerivativeBlocks,
    w: &Operator,
) -> DMatrix<f64> {
    let n = record.n_steps();
    let n_ctrl = blocks.n_controls();
    let mut fine = DMatrix::<f64>::zeros(n, n_ctrl);
    for l in 0..n {
        let g = &(&record.forward_cumulant(l) * w) * &record.backward_cumulant(l + 2);
        for k in 0..n_ctrl {
            fine[(l, k)] = trace_of_product_re(&g, blocks.block(l, k));
        }
    }
    record.fold_substeps(fine)
}

fn trace_of_product_re(a: &Operator, b: &Operator) -> f64 {
    let d = a.dim();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            let p = a.data()[(i, j)] * b.data()[(j, i)];
            acc += p.re;
        }
    }
    acc
}

/// Gradient of `entanglement_infidelity(U_total, target)` in the control
/// amplitudes.
pub fn entanglement_infidelity_gradient(
    record: &PropagationRecord,
    blocks: &DerivativeBlocks,
    target: &Operator,
) -> Result<DMatrix<f64>> {
    if target.dim() != record.dim() {
        return Err(Error::DimensionMismatch {
            context: "entanglement gradient target",
            expected: record.dim(),
            got: target.dim(),
        });
    }
    let d = target.dim() as f64;
    let c = (&target.dagger() * record.total()).trace();
    let w = target.dagger().scaled(c.conj() * (-2.0 / (d * d)));
    Ok(assemble_gradient(record, blocks, &w))
}

/// Gradient of the ensemble-averaged infidelity. `noisy` pairs each record
/// with its derivative blocks; with `neglect_systematic` the noiseless
/// record and blocks carry the reference-propagator dependence.
pub fn noise_average_infidelity_gradient(
    noisy: &[(PropagationRecord, DerivativeBlocks)],
    target: &Operator,
    neglect_systematic: bool,
    noiseless: Option<(&PropagationRecord, &DerivativeBlocks)>,
) -> Result<DMatrix<f64>> {
    if noisy.is_empty() {
        return Err(Error::invalid("need at least one propagation record"));
    }
    if !neglect_systematic {
        let mut acc: Option<DMatrix<f64>> = None;
        for (rec, blocks) in noisy {
            let g = entanglement_infidelity_gradient(rec, blocks, target)? * rec.weight();
            acc = Some(match acc {
                None => g,
                Some(a) => a + g,
            });
        }
        return Ok(acc.expect("nonempty"));
    }
    let (rec0, blocks0) = noiseless.ok_or_else(|| {
        Error::invalid("neglect_systematic_errors requires the noiseless record")
    })?;
    let d = rec0.dim() as f64;
    let u0 = rec0.total();
    let mut acc: Option<DMatrix<f64>> = None;
    // accumulated weight matrix for the reference-propagator dependence
    let mut w0 = Operator::zeros(rec0.dim());
    for (rec, blocks) in noisy {
        let c = (&u0.dagger() * rec.total()).trace();
        let w = u0.dagger().scaled(c.conj() * (-2.0 / (d * d)));
        let g = assemble_gradient(rec, blocks, &w) * rec.weight();
        acc = Some(match acc {
            None => g,
            Some(a) => a + g,
        });
        w0 = &w0 + &rec.total().dagger().scaled(c * (-2.0 / (d * d)) * rec.weight());
    }
    let g0 = assemble_gradient(rec0, blocks0, &w0);
    Ok(acc.expect("nonempty") + g0)
}

/// `1 - |<psi_target| U |psi_0>|^2` for pure states.
pub fn state_transfer_infidelity(
    total: &Operator,
    psi0: &DVector<C64>,
    psi_target: &DVector<C64>,
) -> Result<f64> {
    let c = transfer_amplitude(total, psi0, psi_target)?;
    Ok(1.0 - c.norm_sqr())
}

fn transfer_amplitude(
    total: &Operator,
    psi0: &DVector<C64>,
    psi_target: &DVector<C64>,
) -> Result<C64> {
    let d = total.dim();
    if psi0.len() != d || psi_target.len() != d {
        return Err(Error::DimensionMismatch {
            context: "state transfer states",
            expected: d,
            got: psi0.len().min(psi_target.len()),
        });
    }
    Ok((psi_target.map(|z| z.conj()).transpose() * total.data() * psi0)[(0, 0)])
}

pub fn state_transfer_infidelity_gradient(
    record: &PropagationRecord,
    blocks: &DerivativeBlocks,
    psi0: &DVector<C64>,
    psi_target: &DVector<C64>,
) -> Result<DMatrix<f64>> {
    let c = transfer_amplitude(record.total(), psi0, psi_target)?;
    // c = tr(|psi0><psi_target| U)
    let d = record.dim();
    let mut outer = DMatrix::<C64>::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            outer[(i, j)] = psi0[i] * psi_target[j].conj();
        }
    }
    let w = Operator::new(outer)?.scaled(c.conj() * C64::new(-2.0, 0.0));
    Ok(assemble_gradient(record, blocks, &w))
}

pub fn leakage_error_gradient(
    record: &PropagationRecord,
    blocks: &DerivativeBlocks,
    comp_indices: &[usize],
) -> Result<DMatrix<f64>> {
    validate_subspace(record.total(), comp_indices)?;
    let uc = project(record.total(), comp_indices);
    let ucd = uc.dagger();
    let d_full = record.dim();
    let d_c = comp_indices.len() as f64;
    // embed U_c^dag back into the full space
    let mut m = DMatrix::<C64>::zeros(d_full, d_full);
    for (i, &ri) in comp_indices.iter().enumerate() {
        for (j, &cj) in comp_indices.iter().enumerate() {
            m[(ri, cj)] = ucd.data()[(i, j)];
        }
    }
    let w = Operator::new(m)?.scaled(C64::new(-2.0 / d_c, 0.0));
    Ok(assemble_gradient(record, blocks, &w))
}

/// Gradient of `1 - open_system_fidelity(target, U_s)` for a Lindblad
/// record.
pub fn open_system_infidelity_gradient(
    record: &PropagationRecord,
    blocks: &DerivativeBlocks,
    target: &Operator,
) -> Result<DMatrix<f64>> {
    let d = target.dim();
    if record.dim() != d * d {
        return Err(Error::DimensionMismatch {
            context: "open-system gradient record",
            expected: d * d,
            got: record.dim(),
        });
    }
    let w = target
        .transpose()
        .kron(&target.dagger())
        .scaled(C64::new(-1.0 / (d * d) as f64, 0.0));
    Ok(assemble_gradient(record, blocks, &w))
}
