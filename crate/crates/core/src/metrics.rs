//! Loss and evaluation mathematics.
//!
//! Houses the soft Dice coefficient and its `-log` loss with an analytic
//! gradient, binary IOU/Dice scores, probability-map binarization, and the
//! cup-to-disc ratio with its glaucoma-suspicion threshold. All operations
//! are pure functions over immutable inputs.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smoothing constant added to numerator and denominator of the soft Dice
/// coefficient. Prevents division by zero for empty masks while perturbing
/// documented values by less than 1e-6.
pub const DICE_SMOOTHING: f64 = 1e-6;

/// CDR at or above this value flags the eye as glaucoma-suspicious.
pub const GLAUCOMA_CDR_THRESHOLD: f64 = 0.65;

/// Default threshold for turning probabilities into a binary mask.
pub const DEFAULT_BINARIZE_THRESHOLD: f64 = 0.5;

/// Per-pixel foreground probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    values: Array2<f64>,
}

impl ProbabilityMap {
    /// Validates that every entry lies in `[0, 1]` and dimensions are nonzero.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (h, w) = values.dim();
        if h == 0 || w == 0 {
            return Err(Error::DimensionMismatch(format!(
                "probability map must be at least 1x1, got {h}x{w}"
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange(format!(
                "probability map entry {bad} outside [0, 1]"
            )));
        }
        Ok(Self { values })
    }

    /// Map filled with a single probability everywhere.
    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(Array2::from_elem((height, width), value))
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

impl From<&BinaryMask> for ProbabilityMap {
    fn from(mask: &BinaryMask) -> Self {
        Self {
            values: mask.values().map(|&v| f64::from(v)),
        }
    }
}

/// Per-pixel `{0, 1}` labels: groundtruth and binarized predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    values: Array2<u8>,
}

impl BinaryMask {
    /// Validates that every entry is exactly 0 or 1.
    pub fn new(values: Array2<u8>) -> Result<Self> {
        let (h, w) = values.dim();
        if h == 0 || w == 0 {
            return Err(Error::DimensionMismatch(format!(
                "mask must be at least 1x1, got {h}x{w}"
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::OutOfRange(
                "mask entries must be 0 or 1".to_string(),
            ));
        }
        Ok(Self { values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            values: Array2::zeros((height, width)),
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            values: Array2::from_elem((height, width), 1),
        }
    }

    /// Builds a mask from a predicate over `(row, col)`.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        Self {
            values: Array2::from_shape_fn((height, width), |(r, c)| u8::from(f(r, c))),
        }
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<u8> {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.values[(row, col)]
    }

    /// Number of foreground pixels.
    pub fn foreground_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.values.iter().all(|&v| v == 0)
    }

    /// Inclusive row span `(first, last)` of the foreground, if any.
    pub fn row_extent(&self) -> Option<(usize, usize)> {
        let mut first = None;
        let mut last = None;
        for (r, row) in self.values.outer_iter().enumerate() {
            if row.iter().any(|&v| v == 1) {
                if first.is_none() {
                    first = Some(r);
                }
                last = Some(r);
            }
        }
        Some((first?, last?))
    }
}

/// IOU/Dice scores for a set of images together with their per-image values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Unweighted mean of per-image IOU values.
    pub iou: f64,
    /// Unweighted mean of per-image Dice values.
    pub dice: f64,
    /// `(image id, iou, dice)` triples in evaluation order.
    pub per_image: Vec<(String, f64, f64)>,
}

impl ScoreReport {
    /// Aggregates per-image scores as unweighted arithmetic means.
    pub fn from_per_image(per_image: Vec<(String, f64, f64)>) -> Self {
        let n = per_image.len().max(1) as f64;
        let iou = per_image.iter().map(|(_, i, _)| i).sum::<f64>() / n;
        let dice = per_image.iter().map(|(_, _, d)| d).sum::<f64>() / n;
        Self {
            iou,
            dice,
            per_image,
        }
    }
}

fn check_dims(
    (ph, pw): (usize, usize),
    (th, tw): (usize, usize),
    what: &str,
) -> Result<()> {
    if (ph, pw) != (th, tw) {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {ph}x{pw} vs {th}x{tw}"
        )));
    }
    Ok(())
}

/// Soft Dice coefficient `d(A, B) = (2 Σ a·b + ε) / (Σ a² + Σ b² + ε)`.
///
/// Extends the binary Dice score to probability maps; equals the binary score
/// (to within the smoothing effect) whenever `pred` is itself binary.
pub fn soft_dice(pred: &ProbabilityMap, target: &BinaryMask) -> Result<f64> {
    check_dims(
        (pred.height(), pred.width()),
        (target.height(), target.width()),
        "soft_dice",
    )?;
    let mut cross = 0.0;
    let mut pred_sq = 0.0;
    let mut target_sq = 0.0;
    for (&a, &b) in pred.values().iter().zip(target.values().iter()) {
        let b = f64::from(b);
        cross += a * b;
        pred_sq += a * a;
        target_sq += b; // b² = b for binary values
    }
    Ok((2.0 * cross + DICE_SMOOTHING) / (pred_sq + target_sq + DICE_SMOOTHING))
}

/// Training loss `l(A, B) = -log d(A, B)`; zero iff the soft Dice is 1.
pub fn log_dice_loss(pred: &ProbabilityMap, target: &BinaryMask) -> Result<f64> {
    Ok(-soft_dice(pred, target)?.ln())
}

/// Analytic gradient `∂l/∂a_ij` of [`log_dice_loss`] with respect to every
/// prediction entry.
///
/// With `N = 2 Σ a·b + ε` and `D = Σ a² + Σ b² + ε` the loss is
/// `ln D - ln N`, so `∂l/∂a_ij = 2 a_ij / D - 2 b_ij / N`.
pub fn loss_gradient(pred: &ProbabilityMap, target: &BinaryMask) -> Result<Array2<f64>> {
    check_dims(
        (pred.height(), pred.width()),
        (target.height(), target.width()),
        "loss_gradient",
    )?;
    let mut cross = 0.0;
    let mut pred_sq = 0.0;
    let mut target_sum = 0.0;
    for (&a, &b) in pred.values().iter().zip(target.values().iter()) {
        let b = f64::from(b);
        cross += a * b;
        pred_sq += a * a;
        target_sum += b;
    }
    let numer = 2.0 * cross + DICE_SMOOTHING;
    let denom = pred_sq + target_sum + DICE_SMOOTHING;
    let mut grad = Array2::zeros((pred.height(), pred.width()));
    for ((g, &a), &b) in grad
        .iter_mut()
        .zip(pred.values().iter())
        .zip(target.values().iter())
    {
        *g = 2.0 * a / denom - 2.0 * f64::from(b) / numer;
    }
    Ok(grad)
}

fn overlap_counts(a: &BinaryMask, b: &BinaryMask) -> (usize, usize, usize) {
    let mut inter = 0;
    let mut count_a = 0;
    let mut count_b = 0;
    for (&x, &y) in a.values().iter().zip(b.values().iter()) {
        inter += usize::from(x == 1 && y == 1);
        count_a += usize::from(x == 1);
        count_b += usize::from(y == 1);
    }
    (inter, count_a, count_b)
}

/// Intersection-over-Union `|A ∩ B| / |A ∪ B|`; defined as 1.0 when both
/// masks are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_dims((a.height(), a.width()), (b.height(), b.width()), "iou")?;
    let (inter, ca, cb) = overlap_counts(a, b);
    let union = ca + cb - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Binary Dice score `2|A ∩ B| / (|A| + |B|)`; 1.0 for empty-vs-empty.
///
/// Satisfies `dice = 2·iou / (1 + iou)` exactly on pixel counts.
pub fn dice_binary(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_dims(
        (a.height(), a.width()),
        (b.height(), b.width()),
        "dice_binary",
    )?;
    let (inter, ca, cb) = overlap_counts(a, b);
    if ca + cb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (ca + cb) as f64)
}

/// Thresholds a probability map into a mask: pixel → 1 iff value ≥ threshold.
pub fn binarize(pred: &ProbabilityMap, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::OutOfRange(format!(
            "binarize threshold must lie in (0, 1), got {threshold}"
        )));
    }
    Ok(BinaryMask {
        values: pred.values().map(|&v| u8::from(v >= threshold)),
    })
}

/// Cup-to-disc ratio: vertical extent of the cup foreground divided by the
/// vertical extent of the disc foreground, both in rows.
///
/// Returns 0 for an empty cup; an empty disc leaves the ratio undefined and
/// is rejected.
pub fn cdr(disc: &BinaryMask, cup: &BinaryMask) -> Result<f64> {
    check_dims(
        (disc.height(), disc.width()),
        (cup.height(), cup.width()),
        "cdr",
    )?;
    let (disc_first, disc_last) = disc
        .row_extent()
        .ok_or_else(|| Error::NoDiscFound("empty disc mask, CDR undefined".to_string()))?;
    let disc_height = (disc_last - disc_first + 1) as f64;
    let cup_height = match cup.row_extent() {
        Some((first, last)) => (last - first + 1) as f64,
        None => return Ok(0.0),
    };
    Ok(cup_height / disc_height)
}

/// True iff the CDR reaches the glaucoma-suspicion threshold of 0.65.
pub fn glaucoma_flag(cdr_value: f64) -> Result<bool> {
    if cdr_value < 0.0 || !cdr_value.is_finite() {
        return Err(Error::OutOfRange(format!(
            "CDR must be a finite non-negative value, got {cdr_value}"
        )));
    }
    Ok(cdr_value >= GLAUCOMA_CDR_THRESHOLD)
}
