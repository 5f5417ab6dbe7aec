use super::{NodeId, NumericsError, Result, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoordStatus {
    Pass,
    Fail,
    /// A perturbation crossed a kink (relu, max routing, smooth-L1 switch).
    Skipped,
}

#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub status: CoordStatus,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub coords: Vec<CoordCheck>,
    /// Largest relative error over non-skipped coordinates.
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.coords.iter().all(|c| c.status != CoordStatus::Fail)
    }

    pub fn skipped(&self) -> usize {
        self.count(CoordStatus::Skipped)
    }

    pub fn failed(&self) -> usize {
        self.count(CoordStatus::Fail)
    }

    fn count(&self, status: CoordStatus) -> usize {
        self.coords.iter().filter(|c| c.status == status).count()
    }
}

/// Compares the taped gradient of a scalar function against central
/// differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
///
/// `builder` receives a fresh tape and the point as a parameter node and must
/// return a scalar node. Relative error is `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(
    builder: F,
    point: &Tensor,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(NumericsError::InvalidAttr {
            op: "grad_check",
            detail: format!("step must be positive, got {step}"),
        });
    }
    let eval = |x: Tensor| -> Result<(f64, Vec<u32>)> {
        let mut tape = Tape::new();
        let p = tape.param(x);
        let root = builder(&mut tape, p)?;
        let value = tape.try_value(root)?;
        if !value.is_scalar() {
            return Err(NumericsError::NotScalar(value.shape().to_vec()));
        }
        Ok((value.item(), tape.branch_signature()))
    };

    let mut tape = Tape::new();
    let p = tape.param(point.clone());
    let root = builder(&mut tape, p)?;
    let analytic = tape.backward(root)?.take(p).expect("point is a parameter");
    let base_sig = tape.branch_signature();

    let mut coords = Vec::with_capacity(point.len());
    let mut max_rel_error: f64 = 0.0;
    for i in 0..point.len() {
        let shifted = |delta: f64| {
            let mut x = point.clone();
            x.data_mut()[i] += delta;
            eval(x)
        };
        let (fp, sig_p) = shifted(step)?;
        let (fm, sig_m) = shifted(-step)?;
        let a = analytic.data()[i];
        let numeric = (fp - fm) / (2.0 * step);
        let rel_error = (a - numeric).abs() / a.abs().max(1.0);
        let status = if sig_p != base_sig || sig_m != base_sig {
            CoordStatus::Skipped
        } else if rel_error <= tolerance {
            CoordStatus::Pass
        } else {
            CoordStatus::Fail
        };
        if status != CoordStatus::Skipped {
            max_rel_error = max_rel_error.max(rel_error);
        }
        coords.push(CoordCheck {
            index: i,
            analytic: a,
            numeric,
            rel_error,
            status,
        });
    }
    Ok(GradCheckReport {
        coords,
        max_rel_error,
        tolerance,
    })
}
