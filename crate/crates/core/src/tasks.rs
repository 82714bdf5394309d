// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic image-to-image tasks, the 2x2 prompt layout and task metrics.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::Rng;

pub const CHANNELS: usize = 3;

/// Square RGB image, pixels in `(channel, row, col)` order, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridImage {
    pub side: usize,
    pub pixels: Vec<f64>,
}

impl GridImage {
    pub fn filled(side: usize, value: f64) -> Self {
        GridImage { side, pixels: vec![value; CHANNELS * side * side] }
    }

    pub fn from_pixels(side: usize, pixels: Vec<f64>) -> Result<Self> {
        if side == 0 || pixels.len() != CHANNELS * side * side {
            return Err(shape_err!("{} pixels for a {side}x{side} image", pixels.len()));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid!("pixel outside [0, 1]"));
        }
        Ok(GridImage { side, pixels })
    }

    #[inline]
    pub fn idx(&self, c: usize, r: usize, col: usize) -> usize {
        (c * self.side + r) * self.side + col
    }

    #[inline]
    pub fn at(&self, c: usize, r: usize, col: usize) -> f64 {
        self.pixels[self.idx(c, r, col)]
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Channel mean at each pixel, row-major.
    pub fn intensity(&self) -> Vec<f64> {
        let n = self.side * self.side;
        (0..n)
            .map(|p| (0..CHANNELS).map(|c| self.pixels[c * n + p]).sum::<f64>() / CHANNELS as f64)
            .collect()
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> GridImage {
        GridImage { side: self.side, pixels: self.pixels.iter().map(|&p| f(p)).collect() }
    }

    fn replicate(side: usize, plane: &[f64]) -> GridImage {
        let mut pixels = Vec::with_capacity(CHANNELS * plane.len());
        for _ in 0..CHANNELS {
            pixels.extend_from_slice(plane);
        }
        GridImage { side, pixels }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TaskId {
    Segmentation,
    Lowlight,
    Colorize,
    Inpaint,
    Identity,
}

impl TaskId {
    pub const ALL: [TaskId; 5] =
        [TaskId::Segmentation, TaskId::Lowlight, TaskId::Colorize, TaskId::Inpaint, TaskId::Identity];
    /// The four evaluated tasks (identity is a filler / arithmetic operand).
    pub const EVAL: [TaskId; 4] = [TaskId::Segmentation, TaskId::Lowlight, TaskId::Colorize, TaskId::Inpaint];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Segmentation => "segmentation",
            TaskId::Lowlight => "lowlight",
            TaskId::Colorize => "colorize",
            TaskId::Inpaint => "inpaint",
            TaskId::Identity => "identity",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<TaskId> {
        TaskId::ALL.get(usize::from(code)).copied().ok_or_else(|| invalid!("task code {code}"))
    }

    /// Metric reported for the task.
    pub fn metric(self) -> Metric {
        match self {
            TaskId::Segmentation => Metric::MIoU,
            _ => Metric::Mse,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for TaskId {
    type Err = Error;
    fn from_str(s: &str) -> Result<TaskId> {
        TaskId::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| invalid!("unknown task {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Metric {
    /// Lower is better.
    Mse,
    /// Higher is better.
    MIoU,
}

impl Metric {
    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::MIoU)
    }

    pub fn score(self, pred: &GridImage, gt: &GridImage) -> Result<f64> {
        match self {
            Metric::Mse => loss_mse(pred, gt),
            Metric::MIoU => metric_miou(pred, gt),
        }
    }

    /// Score as a loss (lower is better).
    pub fn as_loss(self, score: f64) -> f64 {
        match self {
            Metric::Mse => score,
            Metric::MIoU => 1.0 - score,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::MIoU => "miou",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TripletSample {
    pub task: TaskId,
    pub x_s: GridImage,
    pub y_s: GridImage,
    pub x_q: GridImage,
    pub y_q: GridImage,
}

/// Smooth random field: a tinted background plus a few clamped boxes.
pub fn base_image(side: usize, rng: &mut Rng) -> GridImage {
    let mut img = GridImage::filled(side, 0.0);
    let n = side * side;
    for c in 0..CHANNELS {
        let bg = rng.range(0.05, 0.45);
        img.pixels[c * n..(c + 1) * n].iter_mut().for_each(|p| *p = bg);
    }
    let boxes = 1 + rng.below(3);
    for _ in 0..boxes {
        let h = 1 + side / 4 + rng.below(side / 2);
        let w = 1 + side / 4 + rng.below(side / 2);
        let r0 = rng.below(side - h.min(side) + 1);
        let c0 = rng.below(side - w.min(side) + 1);
        let tint: [f64; CHANNELS] = [rng.range(0.2, 0.8), rng.range(0.2, 0.8), rng.range(0.2, 0.8)];
        for (c, t) in tint.iter().enumerate() {
            for r in r0..(r0 + h).min(side) {
                for col in c0..(c0 + w).min(side) {
                    let i = img.idx(c, r, col);
                    img.pixels[i] = (img.pixels[i] + t).clamp(0.0, 1.0);
                }
            }
        }
    }
    img
}

/// Side of the inpainting square: area `floor(side^2 / 8)`.
pub fn inpaint_square_side(side: usize) -> usize {
    let area = side * side / 8;
    let mut s = 0;
    while (s + 1) * (s + 1) <= area {
        s += 1;
    }
    s
}

/// Apply a task to a base image, returning `(input, target)`.
pub fn apply_task(task: TaskId, base: &GridImage, rng: &mut Rng) -> (GridImage, GridImage) {
    let side = base.side;
    match task {
        TaskId::Segmentation => {
            let mask: Vec<f64> =
                base.intensity().iter().map(|&m| if m > 0.5 { 1.0 } else { 0.0 }).collect();
            (base.clone(), GridImage::replicate(side, &mask))
        }
        TaskId::Lowlight => (base.map(|p| 0.5 * p), base.clone()),
        TaskId::Colorize => (GridImage::replicate(side, &base.intensity()), base.clone()),
        TaskId::Inpaint => {
            let s = inpaint_square_side(side);
            let r0 = rng.below(side - s + 1);
            let c0 = rng.below(side - s + 1);
            let mut x = base.clone();
            for c in 0..CHANNELS {
                for r in r0..r0 + s {
                    for col in c0..c0 + s {
                        let i = x.idx(c, r, col);
                        x.pixels[i] = 0.0;
                    }
                }
            }
            (x, base.clone())
        }
        TaskId::Identity => (base.clone(), base.clone()),
    }
}

/// Draw one `(x_s, y_s, x_q, y_q)` triplet for `task`. Pixels are rounded
/// to `f32` so samples survive 32-bit dataset files exactly.
pub fn gen_sample(task: TaskId, side: usize, rng: &Rng) -> Result<TripletSample> {
    if side < 4 {
        return Err(invalid!("image side must be at least 4, got {side}"));
    }
    let mut support = rng.child_named("support");
    let mut query = rng.child_named("query");
    let base_s = base_image(side, &mut support);
    let base_q = base_image(side, &mut query);
    let (x_s, y_s) = apply_task(task, &base_s, &mut support);
    let (x_q, y_q) = apply_task(task, &base_q, &mut query);
    let f32_exact = |img: GridImage| img.map(|p| f64::from(p as f32));
    Ok(TripletSample { task, x_s: f32_exact(x_s), y_s: f32_exact(y_s), x_q: f32_exact(x_q), y_q: f32_exact(y_q) })
}

// ---------------------------------------------------------------------------
// Prompt layout
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Quadrant {
    TL,
    TR,
    BL,
    BR,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::TL, Quadrant::TR, Quadrant::BL, Quadrant::BR];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Role of a position in the CLS + 2x2 token grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TokenRole {
    Cls,
    Quad(Quadrant),
}

impl TokenRole {
    pub fn name(self) -> &'static str {
        match self {
            TokenRole::Cls => "CLS",
            TokenRole::Quad(Quadrant::TL) => "TL",
            TokenRole::Quad(Quadrant::TR) => "TR",
            TokenRole::Quad(Quadrant::BL) => "BL",
            TokenRole::Quad(Quadrant::BR) => "BR",
        }
    }
}

/// Grid position of a token: 0 is CLS, then `q` positions per quadrant in
/// TL, TR, BL, BR order, row-major inside each quadrant.
pub fn grid_position(role: TokenRole, within: usize, q: usize) -> usize {
    match role {
        TokenRole::Cls => 0,
        TokenRole::Quad(quad) => 1 + quad.index() * q + within,
    }
}

pub fn role_of(position: usize, q: usize) -> (TokenRole, usize) {
    if position == 0 {
        (TokenRole::Cls, 0)
    } else {
        let p = position - 1;
        (TokenRole::Quad(Quadrant::ALL[(p / q).min(3)]), p % q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PromptMode {
    /// Support pair in the top row, query bottom left, bottom right masked.
    OneShot,
    /// Only CLS and the query quadrant reach the encoder.
    QueryOnly,
}

impl PromptMode {
    /// Quadrants whose patches are fed to the encoder.
    pub fn visible_quadrants(self) -> &'static [Quadrant] {
        match self {
            PromptMode::OneShot => &[Quadrant::TL, Quadrant::TR, Quadrant::BL],
            PromptMode::QueryOnly => &[Quadrant::BL],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PromptMode::OneShot => "one-shot",
            PromptMode::QueryOnly => "query-only",
        }
    }
}

/// Tokenised CLS + 2x2 prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptGrid {
    pub mode: PromptMode,
    pub patch_side: usize,
    pub image_side: usize,
    /// Tokens per quadrant.
    pub q: usize,
    /// Grid positions visible to the encoder, ascending (CLS first).
    pub encoder_positions: Vec<usize>,
    /// Flattened patch pixels per grid position; `None` for CLS and for
    /// quadrants that carry no content in this mode.
    pub tokens: Vec<Option<Vec<f64>>>,
    /// Per decoder position: true when the decoder sees a mask token there.
    pub mask_flags: Vec<bool>,
}

impl PromptGrid {
    pub fn decoder_len(&self) -> usize {
        4 * self.q + 1
    }

    pub fn patch_dim(&self) -> usize {
        CHANNELS * self.patch_side * self.patch_side
    }

    pub fn role(&self, position: usize) -> (TokenRole, usize) {
        role_of(position, self.q)
    }

    /// Reassemble a quadrant's patches into an image.
    pub fn detokenize(&self, quad: Quadrant) -> Result<GridImage> {
        let mut patches = Vec::with_capacity(self.q);
        for i in 0..self.q {
            let pos = grid_position(TokenRole::Quad(quad), i, self.q);
            match &self.tokens[pos] {
                Some(p) => patches.push(p.as_slice()),
                None => return Err(Error::Missing(alloc::format!("content for quadrant {quad:?}"))),
            }
        }
        Ok(patches_to_image(&patches, self.image_side, self.patch_side))
    }
}

/// Split an image into flattened `(channel, row, col)` patches, row-major.
pub fn image_to_patches(img: &GridImage, patch_side: usize) -> Vec<Vec<f64>> {
    let per_row = img.side / patch_side;
    let mut out = Vec::with_capacity(per_row * per_row);
    for pr in 0..per_row {
        for pc in 0..per_row {
            let mut patch = Vec::with_capacity(CHANNELS * patch_side * patch_side);
            for c in 0..CHANNELS {
                for r in 0..patch_side {
                    for col in 0..patch_side {
                        patch.push(img.at(c, pr * patch_side + r, pc * patch_side + col));
                    }
                }
            }
            out.push(patch);
        }
    }
    out
}

/// Inverse of [`image_to_patches`]; values are clamped into `[0, 1]`.
pub fn patches_to_image(patches: &[&[f64]], side: usize, patch_side: usize) -> GridImage {
    let per_row = side / patch_side;
    let mut img = GridImage::filled(side, 0.0);
    for (p, patch) in patches.iter().enumerate() {
        let (pr, pc) = (p / per_row, p % per_row);
        let mut k = 0;
        for c in 0..CHANNELS {
            for r in 0..patch_side {
                for col in 0..patch_side {
                    let i = img.idx(c, pr * patch_side + r, pc * patch_side + col);
                    img.pixels[i] = patch[k].clamp(0.0, 1.0);
                    k += 1;
                }
            }
        }
    }
    img
}

/// Lay a triplet out as a prompt. In query-only mode the support pair is
/// ignored entirely.
pub fn assemble_prompt(sample: &TripletSample, mode: PromptMode, patch_side: usize) -> Result<PromptGrid> {
    let side = sample.x_q.side;
    if patch_side == 0 || side % patch_side != 0 {
        return Err(invalid!("image side {side} not divisible by patch side {patch_side}"));
    }
    let per_row = side / patch_side;
    let q = per_row * per_row;
    let mut tokens: Vec<Option<Vec<f64>>> = vec![None; 4 * q + 1];
    let mut encoder_positions = vec![0];
    for &quad in mode.visible_quadrants() {
        let img = match quad {
            Quadrant::TL => &sample.x_s,
            Quadrant::TR => &sample.y_s,
            Quadrant::BL => &sample.x_q,
            Quadrant::BR => unreachable!("bottom right is never visible"),
        };
        if img.side != side {
            return Err(shape_err!("triplet images differ in size"));
        }
        for (i, patch) in image_to_patches(img, patch_side).into_iter().enumerate() {
            let pos = grid_position(TokenRole::Quad(quad), i, q);
            tokens[pos] = Some(patch);
            encoder_positions.push(pos);
        }
    }
    encoder_positions.sort_unstable();
    let mut mask_flags = vec![true; 4 * q + 1];
    for &p in &encoder_positions {
        mask_flags[p] = false;
    }
    Ok(PromptGrid { mode, patch_side, image_side: side, q, encoder_positions, tokens, mask_flags })
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

fn check_dims(a: &GridImage, b: &GridImage) -> Result<()> {
    if a.side != b.side || a.pixels.len() != b.pixels.len() {
        return Err(shape_err!("image sizes {} and {}", a.side, b.side));
    }
    Ok(())
}

pub fn loss_mse(pred: &GridImage, gt: &GridImage) -> Result<f64> {
    check_dims(pred, gt)?;
    let n = pred.pixels.len() as f64;
    Ok(pred.pixels.iter().zip(&gt.pixels).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// Two-class mean IoU after binarising both images at 0.5 on the channel mean.
pub fn metric_miou(pred: &GridImage, gt: &GridImage) -> Result<f64> {
    check_dims(pred, gt)?;
    let p: Vec<bool> = pred.intensity().iter().map(|&v| v > 0.5).collect();
    let g: Vec<bool> = gt.intensity().iter().map(|&v| v > 0.5).collect();
    let iou = |class: bool| {
        let inter = p.iter().zip(&g).filter(|(a, b)| **a == class && **b == class).count();
        let union = p.iter().zip(&g).filter(|(a, b)| **a == class || **b == class).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    };
    Ok(0.5 * (iou(true) + iou(false)))
}

// ---------------------------------------------------------------------------
// Dataset splits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes { train: 200, val: 50, test: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub split_id: u8,
    pub side: usize,
    pub train: Vec<TripletSample>,
    pub val: Vec<TripletSample>,
    pub test: Vec<TripletSample>,
}

impl DatasetSplit {
    pub fn part(&self, part: Part) -> &[TripletSample] {
        match part {
            Part::Train => &self.train,
            Part::Val => &self.val,
            Part::Test => &self.test,
        }
    }

    /// Samples of one task within a part, in stored order.
    pub fn of_task(&self, part: Part, task: TaskId) -> Vec<&TripletSample> {
        self.part(part).iter().filter(|s| s.task == task).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Part {
    Train,
    Val,
    Test,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Train, Part::Val, Part::Test];

    pub fn name(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Val => "val",
            Part::Test => "test",
        }
    }
}

/// Generate one split. Every sample draws from its own stream keyed by
/// `(split, part, task, index)`.
pub fn gen_split(
    root: &Rng,
    split_id: u8,
    tasks: &[TaskId],
    sizes: SplitSizes,
    side: usize,
) -> Result<DatasetSplit> {
    if split_id > 3 {
        return Err(invalid!("split id {split_id} outside 0..=3"));
    }
    let split_rng = root.child_named("split").child(u64::from(split_id));
    let mut parts: [Vec<TripletSample>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (pi, (part, n)) in
        Part::ALL.iter().zip([sizes.train, sizes.val, sizes.test]).enumerate()
    {
        let part_rng = split_rng.child_named(part.name());
        for &task in tasks {
            let task_rng = part_rng.child(u64::from(task.code()));
            for i in 0..n {
                parts[pi].push(gen_sample(task, side, &task_rng.child(i as u64))?);
            }
        }
    }
    let [train, val, test] = parts;
    Ok(DatasetSplit { split_id, side, train, val, test })
}

/// Human-readable task list, e.g. for logs.
pub fn task_list(tasks: &[TaskId]) -> String {
    let names: Vec<&str> = tasks.iter().map(|t| t.name()).collect();
    names.join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn ones(side: usize) -> GridImage {
        GridImage::filled(side, 1.0)
    }

    #[test]
    fn lowlight_on_white() {
        let (x, y) = apply_task(TaskId::Lowlight, &ones(8), &mut Rng::new(0));
        assert!(x.pixels.iter().all(|&p| p == 0.5));
        assert!(y.pixels.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn identity_copies() {
        let s = gen_sample(TaskId::Identity, 8, &Rng::new(4)).unwrap();
        assert_eq!(s.x_q, s.y_q);
        assert_eq!(s.x_s, s.y_s);
    }

    #[test]
    fn inpaint_zeroes_a_two_by_two_square() {
        assert_eq!(inpaint_square_side(8), 2);
        let (x, _) = apply_task(TaskId::Inpaint, &ones(8), &mut Rng::new(9));
        for c in 0..CHANNELS {
            let zeros = (0..64).filter(|&p| x.pixels[c * 64 + p] == 0.0).count();
            assert_eq!(zeros, 4);
        }
    }

    #[test]
    fn small_side_rejected() {
        assert!(gen_sample(TaskId::Lowlight, 3, &Rng::new(0)).is_err());
    }

    #[test]
    fn prompt_token_counts() {
        let s = gen_sample(TaskId::Colorize, 8, &Rng::new(1)).unwrap();
        let one = assemble_prompt(&s, PromptMode::OneShot, 4).unwrap();
        assert_eq!(one.decoder_len(), 17);
        assert_eq!(one.encoder_positions.len(), 13);
        let qo = assemble_prompt(&s, PromptMode::QueryOnly, 4).unwrap();
        assert_eq!(qo.encoder_positions, vec![0, 9, 10, 11, 12]);
        assert!(qo.tokens[1].is_none() && qo.tokens[5].is_none());
        assert!(qo.mask_flags[13..].iter().all(|&m| m));
        assert!(assemble_prompt(&s, PromptMode::OneShot, 3).is_err());
    }

    #[test]
    fn prompt_round_trip_is_lossless() {
        let s = gen_sample(TaskId::Segmentation, 8, &Rng::new(2)).unwrap();
        let p = assemble_prompt(&s, PromptMode::OneShot, 2).unwrap();
        assert_eq!(p.detokenize(Quadrant::BL).unwrap(), s.x_q);
        assert_eq!(p.detokenize(Quadrant::TL).unwrap(), s.x_s);
        assert_eq!(p.detokenize(Quadrant::TR).unwrap(), s.y_s);
        assert!(p.detokenize(Quadrant::BR).is_err());
    }

    #[test]
    fn mse_examples() {
        let a = GridImage::filled(4, 0.0);
        assert_eq!(loss_mse(&a, &a).unwrap(), 0.0);
        assert_eq!(loss_mse(&a, &ones(4)).unwrap(), 1.0);
        let mut half = a.clone();
        for p in half.pixels.iter_mut().step_by(2) {
            *p = 0.5;
        }
        // half the pixels off by 0.5: 0.5 * 0.25
        assert_eq!(loss_mse(&half, &a).unwrap(), 0.125);
        let mut quarter = a.clone();
        for p in quarter.pixels.iter_mut().step_by(4) {
            *p = 0.5;
        }
        assert_eq!(loss_mse(&quarter, &a).unwrap(), 0.0625);
        assert!(loss_mse(&a, &ones(5)).is_err());
    }

    fn mask_image(fg: &[(usize, usize)]) -> GridImage {
        let mut img = GridImage::filled(2, 0.0);
        for &(r, c) in fg {
            for ch in 0..CHANNELS {
                let i = img.idx(ch, r, c);
                img.pixels[i] = 1.0;
            }
        }
        img
    }

    #[test]
    fn miou_examples() {
        let gt = mask_image(&[(0, 0), (0, 1)]);
        assert_eq!(metric_miou(&gt, &gt).unwrap(), 1.0);
        let comp = mask_image(&[(1, 0), (1, 1)]);
        assert_eq!(metric_miou(&comp, &gt).unwrap(), 0.0);
        let pred = mask_image(&[(0, 0)]);
        // fg IoU 1/2, bg IoU 2/3
        assert!((metric_miou(&pred, &gt).unwrap() - 0.583_333_333_333).abs() < 1e-9);
        // both class-empty for foreground
        let empty = mask_image(&[]);
        assert_eq!(metric_miou(&empty, &empty).unwrap(), 1.0);
    }

    #[test]
    fn split_parts_are_disjoint_and_deterministic() {
        let root = Rng::new(5);
        let sizes = SplitSizes { train: 3, val: 2, test: 2 };
        let a = gen_split(&root, 0, &TaskId::ALL, sizes, 8).unwrap();
        let b = gen_split(&root, 0, &TaskId::ALL, sizes, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 15);
        for t in &a.train {
            assert!(!a.val.contains(t) && !a.test.contains(t));
        }
        let c = gen_split(&root, 1, &TaskId::ALL, sizes, 8).unwrap();
        assert_ne!(a.train[0], c.train[0]);
        assert!(gen_split(&root, 4, &TaskId::ALL, sizes, 8).is_err());
    }

    proptest! {
        #[test]
        fn generated_pixels_in_range(seed in any::<u64>(), t in 0u8..5, side in 4usize..12) {
            let task = TaskId::from_code(t).unwrap();
            let s = gen_sample(task, side, &Rng::new(seed)).unwrap();
            for img in [&s.x_s, &s.y_s, &s.x_q, &s.y_q] {
                prop_assert!(img.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
            }
            // regenerating the query from its base reproduces the target
            let mut q = Rng::new(seed).child_named("query");
            let base = base_image(side, &mut q);
            let (x, y) = apply_task(task, &base, &mut q);
            let round = |img: &GridImage| -> Vec<f64> { img.pixels.iter().map(|&p| f64::from(p as f32)).collect() };
            prop_assert_eq!(round(&x), s.x_q.pixels.clone());
            prop_assert_eq!(round(&y), s.y_q.pixels.clone());
        }

        #[test]
        fn metrics_symmetric(seed in any::<u64>()) {
            let mut r = Rng::new(seed);
            let a = base_image(6, &mut r);
            let b = base_image(6, &mut r);
            prop_assert_eq!(loss_mse(&a, &b).unwrap(), loss_mse(&b, &a).unwrap());
            let (_, ma) = apply_task(TaskId::Segmentation, &a, &mut r);
            let (_, mb) = apply_task(TaskId::Segmentation, &b, &mut r);
            let flip = |m: &GridImage| GridImage { side: m.side, pixels: m.pixels.iter().map(|p| 1.0 - p).collect() };
            prop_assert!((metric_miou(&ma, &mb).unwrap() - metric_miou(&flip(&ma), &flip(&mb)).unwrap()).abs() < 1e-12);
        }
    }
}
