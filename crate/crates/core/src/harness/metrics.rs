use crate::autodiff::Tensor;
use crate::{Error, Result};

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rel_l2: f64,
    /// set on the final record only, from the best-validation parameters
    pub test_rel_l2: Option<f64>,
    pub seconds: f64,
}

/// `‖m⊙(pred − truth)‖ / ‖m⊙truth‖` for one sample.
pub fn relative_l2(pred: &Tensor<f32>, truth: &Tensor<f32>, mask: &Tensor<f32>) -> Result<f64> {
    if pred.len() != truth.len() || truth.len() != mask.len() {
        return Err(Error::shape(
            "relative_l2",
            format!("{:?} / {:?} / {:?}", pred.shape(), truth.shape(), mask.shape()),
        ));
    }
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for ((&p, &t), &m) in pred.data().iter().zip(truth.data()).zip(mask.data()) {
        let (p, t, m) = (p as f64, t as f64, m as f64);
        num += (m * (p - t)).powi(2);
        den += (m * t).powi(2);
    }
    if den == 0.0 {
        return Err(Error::Degenerate("relative L2 against an all-zero target".into()));
    }
    Ok((num / den).sqrt())
}

/// Checks the record sequence: epochs strictly increase, values finite.
pub fn check_records(records: &[MetricsRecord]) -> Result<()> {
    for pair in records.windows(2) {
        if pair[1].epoch <= pair[0].epoch {
            return Err(Error::Contract(format!(
                "epoch {} follows epoch {}",
                pair[1].epoch, pair[0].epoch
            )));
        }
    }
    for r in records {
        let finite = r.train_loss.is_finite()
            && r.val_rel_l2.is_finite()
            && r.seconds.is_finite()
            && r.test_rel_l2.is_none_or(f64::is_finite);
        if !finite {
            return Err(Error::NonFinite(format!("metrics at epoch {}", r.epoch)));
        }
    }
    Ok(())
}

pub const METRICS_HEADER: &str = "epoch,train_loss,val_rel_l2,test_rel_l2,seconds";

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in records {
        let test = r.test_rel_l2.map(|t| format!("{t:e}")).unwrap_or_default();
        out += &format!(
            "{},{:e},{:e},{},{:.3}\n",
            r.epoch, r.train_loss, r.val_rel_l2, test, r.seconds
        );
    }
    out
}
