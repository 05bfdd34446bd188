//! Order-reconstruction training transform.
//!
//! A clip is cut into segments of `g` consecutive frames. Each segment gets a
//! timestamp slot; the slots keep chronological order while the segment
//! contents are permuted. The model is asked to list every slot's true time
//! range, and [`score_reorder`] grades such a listing.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::FrameRecord;

/// Instruction placed at the top of every reorder prompt.
pub const REORDER_INSTRUCTION: &str =
    "These video segments are shuffled. List each segment's true time range.";

/// Half-open `[start_s, end_s)`; the final segment is closed at stream end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct TimeRange {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeRange {
    pub fn new(start_s: f64, end_s: f64) -> Self {
        Self { start_s, end_s }
    }

    /// Both endpoints rounded to milliseconds, as integers.
    pub fn canonical(&self) -> (i64, i64) {
        (round_ms(self.start_s), round_ms(self.end_s))
    }
}

impl From<[f64; 2]> for TimeRange {
    fn from([start_s, end_s]: [f64; 2]) -> Self {
        Self { start_s, end_s }
    }
}

impl From<TimeRange> for [f64; 2] {
    fn from(r: TimeRange) -> Self {
        [r.start_s, r.end_s]
    }
}

fn round_ms(t: f64) -> i64 {
    (t * 1000.0).round() as i64
}

/// One element of the unshuffled interleaved layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Slot {
    Timestamp { t: f64 },
    Content { frame_id: usize },
}

/// `[ts₀, content₀, ts₁, content₁, …]` for chronologically ordered frames.
pub fn interleave(frames: &[Arc<FrameRecord>]) -> Result<Vec<Slot>> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("interleave of no frames"));
    }
    for w in frames.windows(2) {
        if w[1].timestamp_s < w[0].timestamp_s || w[1].frame_id <= w[0].frame_id {
            return Err(Error::TimeOrder {
                previous: w[0].timestamp_s,
                got: w[1].timestamp_s,
            });
        }
    }
    Ok(frames
        .iter()
        .flat_map(|f| {
            [
                Slot::Timestamp { t: f.timestamp_s },
                Slot::Content {
                    frame_id: f.frame_id,
                },
            ]
        })
        .collect())
}

/// Time ranges of consecutive `group`-frame segments.
///
/// Segment `s` spans from its first frame's timestamp to the next segment's
/// first timestamp; the last one ends at the final frame's timestamp.
/// Segment start times must be strictly increasing.
pub fn segment_ranges(timestamps: &[f64], group: usize) -> Result<Vec<TimeRange>> {
    if group == 0 {
        return Err(Error::InvalidParameter(
            "group size must be at least 1".into(),
        ));
    }
    let last = *timestamps
        .last()
        .ok_or(Error::EmptyInput("no frames to segment"))?;
    for w in timestamps.windows(2) {
        if w[1] < w[0] {
            return Err(Error::TimeOrder {
                previous: w[0],
                got: w[1],
            });
        }
    }
    let starts: Vec<f64> = timestamps.iter().step_by(group).copied().collect();
    for w in starts.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::TimeOrder {
                previous: w[0],
                got: w[1],
            });
        }
    }
    Ok(starts
        .iter()
        .enumerate()
        .map(|(s, &start)| TimeRange::new(start, starts.get(s + 1).copied().unwrap_or(last)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentSlot {
    pub slot_index: usize,
    pub slot_timestamp_s: f64,
    pub content_segment: usize,
}

/// Chronological timestamp slots carrying permuted segment contents.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSequence {
    pub slots: Vec<SegmentSlot>,
    /// Original range of each segment, indexed by segment.
    pub ranges: Vec<TimeRange>,
    /// Frames per segment.
    pub group: usize,
}

impl SegmentSequence {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// `π`: slot `i` shows segment `π[i]`.
    pub fn permutation(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.content_segment).collect()
    }

    /// Segment contents put back in chronological order via `π⁻¹`.
    pub fn unshuffle(&self) -> Vec<usize> {
        let mut inverse = vec![0; self.slots.len()];
        for s in &self.slots {
            inverse[s.content_segment] = s.slot_index;
        }
        inverse
            .iter()
            .map(|&slot| self.slots[slot].content_segment)
            .collect()
    }
}

/// Groups frames into segments and permutes the segment contents with a
/// uniformly random `π` drawn from `seed`. Timestamps stay in place.
pub fn shuffle_with_timestamps(
    frames: &[Arc<FrameRecord>],
    group: usize,
    seed: u64,
) -> Result<(SegmentSequence, Vec<usize>)> {
    interleave(frames)?;
    let timestamps: Vec<f64> = frames.iter().map(|f| f.timestamp_s).collect();
    let ranges = segment_ranges(&timestamps, group)?;
    let mut pi: Vec<usize> = (0..ranges.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pi.shuffle(&mut rng);
    let slots = pi
        .iter()
        .enumerate()
        .map(|(slot_index, &content_segment)| SegmentSlot {
            slot_index,
            slot_timestamp_s: ranges[slot_index].start_s,
            content_segment,
        })
        .collect();
    Ok((
        SegmentSequence {
            slots,
            ranges,
            group,
        },
        pi,
    ))
}

/// Ground truth: the original time range of the content shown in each slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReorderTarget {
    pub true_time_of_slot: Vec<TimeRange>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReorderPrompt {
    pub text: String,
    pub target: ReorderTarget,
}

impl ReorderPrompt {
    /// The reorder sub-question goes before the original QA text.
    pub fn with_question(&self, qa: &str) -> String {
        format!("{}\n{}", self.text, qa)
    }
}

pub fn build_reorder_prompt(seq: &SegmentSequence) -> ReorderPrompt {
    let mut text = String::from(REORDER_INSTRUCTION);
    for slot in &seq.slots {
        text.push_str(&format!(
            "\nSegment {} <t={:.3}s>: <video>",
            slot.slot_index + 1,
            slot.slot_timestamp_s
        ));
    }
    let true_time_of_slot = seq
        .slots
        .iter()
        .map(|s| seq.ranges[s.content_segment])
        .collect();
    ReorderPrompt {
        text,
        target: ReorderTarget { true_time_of_slot },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapScore {
    pub exact_match_fraction: f64,
    pub kendall_tau: f64,
}

pub fn score_reorder(predicted: &[TimeRange], truth: &ReorderTarget) -> Result<OverlapScore> {
    let n = truth.true_time_of_slot.len();
    if predicted.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: predicted.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyInput("reorder target has no slots"));
    }
    let matches = predicted
        .iter()
        .zip(&truth.true_time_of_slot)
        .filter(|(p, t)| p.canonical() == t.canonical())
        .count();
    let pred_starts: Vec<i64> = predicted.iter().map(|r| r.canonical().0).collect();
    let true_starts: Vec<i64> = truth
        .true_time_of_slot
        .iter()
        .map(|r| r.canonical().0)
        .collect();
    Ok(OverlapScore {
        exact_match_fraction: matches as f64 / n as f64,
        kendall_tau: kendall_tau_b(&pred_starts, &true_starts),
    })
}

/// Kendall's τ-b. When either side is entirely tied the coefficient is
/// undefined; we return 1 if both sides carry the same tie pattern, else 0.
pub fn kendall_tau_b<T: PartialOrd>(x: &[T], y: &[T]) -> f64 {
    let n = x.len().min(y.len());
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut untied_x, mut untied_y) = (0i64, 0i64);
    for i in 0..n {
        for j in (i + 1)..n {
            let sx = sign(&x[i], &x[j]);
            let sy = sign(&y[i], &y[j]);
            untied_x += (sx != 0) as i64;
            untied_y += (sy != 0) as i64;
            match sx * sy {
                1 => concordant += 1,
                -1 => discordant += 1,
                _ => {}
            }
        }
    }
    if untied_x == 0 || untied_y == 0 {
        return if untied_x == untied_y { 1.0 } else { 0.0 };
    }
    (concordant - discordant) as f64 / ((untied_x as f64) * (untied_y as f64)).sqrt()
}

fn sign<T: PartialOrd>(a: &T, b: &T) -> i64 {
    if a < b {
        -1
    } else if a > b {
        1
    } else {
        0
    }
}

/// One line of the exported training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SopeRecord {
    pub slots: Vec<ExportSlot>,
    pub prompt: String,
    pub target_ranges: Vec<TimeRange>,
    pub pi: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExportSlot {
    pub slot_ts: f64,
    /// Segment index; equals the frame index when the group size is 1.
    pub content_frame: usize,
}

impl SopeRecord {
    pub fn new(seq: &SegmentSequence, prompt: &ReorderPrompt) -> Self {
        Self {
            slots: seq
                .slots
                .iter()
                .map(|s| ExportSlot {
                    slot_ts: s.slot_timestamp_s,
                    content_frame: s.content_segment,
                })
                .collect(),
            prompt: prompt.text.clone(),
            target_ranges: prompt.target.true_time_of_slot.clone(),
            pi: seq.permutation(),
        }
    }

    pub fn target(&self) -> ReorderTarget {
        ReorderTarget {
            true_time_of_slot: self.target_ranges.clone(),
        }
    }
}

/// A predicted listing: `{"ranges": [[a, b], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReorderPrediction {
    pub ranges: Vec<TimeRange>,
}

pub fn read_jsonl<T, R>(reader: R) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, items: &[T]) -> Result<()> {
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

/// Distribution of exact-match fractions over a prediction set, in eleven
/// bins: `[0, 0.1), …, [0.9, 1.0)` and exactly `1.0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapHistogram {
    pub bins: [u64; 11],
    pub count: u64,
    pub mean_exact_match: f64,
    pub mean_kendall_tau: f64,
}

impl OverlapHistogram {
    pub fn from_scores(scores: &[OverlapScore]) -> Self {
        let mut bins = [0u64; 11];
        let (mut exact, mut tau) = (0.0, 0.0);
        for s in scores {
            let bin = ((s.exact_match_fraction * 10.0 + 1e-9).floor() as usize).min(10);
            bins[bin] += 1;
            exact += s.exact_match_fraction;
            tau += s.kendall_tau;
        }
        let count = scores.len() as u64;
        let denom = count.max(1) as f64;
        Self {
            bins,
            count,
            mean_exact_match: exact / denom,
            mean_kendall_tau: tau / denom,
        }
    }

    pub fn bin_label(i: usize) -> String {
        if i == 10 {
            "1.0".to_string()
        } else {
            format!("[{:.1},{:.1})", i as f64 / 10.0, (i + 1) as f64 / 10.0)
        }
    }
}

/// Scores predictions line by line against exported targets.
pub fn evaluate(
    predictions: &[ReorderPrediction],
    truth: &[SopeRecord],
) -> Result<Vec<OverlapScore>> {
    if predictions.len() != truth.len() {
        return Err(Error::Shape {
            expected: truth.len(),
            got: predictions.len(),
        });
    }
    predictions
        .iter()
        .zip(truth)
        .map(|(p, t)| score_reorder(&p.ranges, &t.target()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Embedding;
    use crate::memory::MemoryBuffer;

    fn frames(timestamps: &[f64]) -> Vec<Arc<FrameRecord>> {
        let mut m = MemoryBuffer::new(2, 8).unwrap();
        for (i, &t) in timestamps.iter().enumerate() {
            m.append(t, vec![Embedding::new(vec![i as f64, 1.0]).unwrap()], None)
                .unwrap();
        }
        m.frames().to_vec()
    }

    fn seconds(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn interleave_layout() {
        let layout = interleave(&frames(&[0.0, 1.5])).unwrap();
        assert_eq!(
            layout,
            vec![
                Slot::Timestamp { t: 0.0 },
                Slot::Content { frame_id: 0 },
                Slot::Timestamp { t: 1.5 },
                Slot::Content { frame_id: 1 },
            ]
        );
        assert_eq!(interleave(&frames(&[2.0])).unwrap().len(), 2);
        assert!(matches!(interleave(&[]), Err(Error::EmptyInput(_))));
        let f = frames(&[0.0, 1.0]);
        let reversed = vec![f[1].clone(), f[0].clone()];
        assert!(matches!(
            interleave(&reversed),
            Err(Error::TimeOrder { .. })
        ));
    }

    #[test]
    fn segment_ranges_by_group() {
        let r = segment_ranges(&seconds(5), 2).unwrap();
        assert_eq!(
            r,
            vec![
                TimeRange::new(0.0, 2.0),
                TimeRange::new(2.0, 4.0),
                TimeRange::new(4.0, 4.0)
            ]
        );
        assert_eq!(segment_ranges(&seconds(16), 4).unwrap().len(), 4);
        assert!(segment_ranges(&[0.0, 0.0], 1).is_err());
        assert_eq!(segment_ranges(&[0.0, 0.0, 1.0], 2).unwrap().len(), 2);
        assert!(segment_ranges(&seconds(3), 0).is_err());
    }

    #[test]
    fn single_frame_is_identity() {
        for seed in 0..20 {
            let (seq, pi) = shuffle_with_timestamps(&frames(&[3.0]), 1, seed).unwrap();
            assert_eq!(pi, vec![0]);
            assert_eq!(seq.len(), 1);
        }
    }

    #[test]
    fn seeded_shuffle_is_reproducible() {
        let f = frames(&seconds(3));
        let (_, a) = shuffle_with_timestamps(&f, 1, 42).unwrap();
        let (_, b) = shuffle_with_timestamps(&f, 1, 42).unwrap();
        assert_eq!(a, b);
        let distinct: std::collections::HashSet<Vec<usize>> = (0..200)
            .map(|s| shuffle_with_timestamps(&f, 1, s).unwrap().1)
            .collect();
        assert_eq!(distinct.len(), 6, "all of S_3 should be reachable");
    }

    #[test]
    fn shuffle_output_invariants() {
        let f = frames(&seconds(20));
        for seed in 0..50 {
            let (seq, pi) = shuffle_with_timestamps(&f, 3, seed).unwrap();
            assert!(seq
                .slots
                .windows(2)
                .all(|w| w[0].slot_timestamp_s < w[1].slot_timestamp_s));
            let mut sorted = pi.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..7).collect::<Vec<_>>());
            assert_eq!(seq.unshuffle(), (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn identity_and_transposition_targets() {
        let ranges = segment_ranges(&seconds(2), 1).unwrap();
        let seq = |pi: &[usize]| SegmentSequence {
            slots: pi
                .iter()
                .enumerate()
                .map(|(i, &c)| SegmentSlot {
                    slot_index: i,
                    slot_timestamp_s: ranges[i].start_s,
                    content_segment: c,
                })
                .collect(),
            ranges: ranges.clone(),
            group: 1,
        };
        let id = build_reorder_prompt(&seq(&[0, 1]));
        assert_eq!(id.target.true_time_of_slot, ranges);
        assert!(id.text.starts_with(REORDER_INSTRUCTION));
        let swapped = build_reorder_prompt(&seq(&[1, 0]));
        assert_eq!(swapped.target.true_time_of_slot, vec![ranges[1], ranges[0]]);
        assert!(swapped.with_question("Q: what?").ends_with("\nQ: what?"));
    }

    #[test]
    fn random_target_is_pi_applied_to_ranges() {
        let f = frames(&[0.0, 1.25, 2.5, 4.0, 7.5]);
        let (seq, pi) = shuffle_with_timestamps(&f, 1, 9).unwrap();
        let prompt = build_reorder_prompt(&seq);
        let ends = [1.25, 2.5, 4.0, 7.5, 7.5];
        for (slot, &content) in pi.iter().enumerate() {
            let r = prompt.target.true_time_of_slot[slot];
            assert_eq!(r.start_s, f[content].timestamp_s);
            assert_eq!(r.end_s, ends[content]);
        }
    }

    #[test]
    fn score_identity_and_reversal() {
        let truth = ReorderTarget {
            true_time_of_slot: segment_ranges(&seconds(6), 1).unwrap(),
        };
        let s = score_reorder(&truth.true_time_of_slot, &truth).unwrap();
        assert_eq!(
            s,
            OverlapScore {
                exact_match_fraction: 1.0,
                kendall_tau: 1.0
            }
        );

        let two = ReorderTarget {
            true_time_of_slot: vec![TimeRange::new(0.0, 1.0), TimeRange::new(1.0, 2.0)],
        };
        let rev = vec![two.true_time_of_slot[1], two.true_time_of_slot[0]];
        let s = score_reorder(&rev, &two).unwrap();
        assert_eq!(
            s,
            OverlapScore {
                exact_match_fraction: 0.0,
                kendall_tau: -1.0
            }
        );

        assert_eq!(
            score_reorder(&rev[..1], &two).unwrap_err(),
            Error::Shape {
                expected: 2,
                got: 1
            }
        );
    }

    #[test]
    fn score_rounds_to_milliseconds() {
        let truth = ReorderTarget {
            true_time_of_slot: vec![TimeRange::new(0.1, 0.2)],
        };
        let close = [TimeRange::new(0.1000004, 0.1999996)];
        assert_eq!(
            score_reorder(&close, &truth).unwrap().exact_match_fraction,
            1.0
        );
        let off = [TimeRange::new(0.101, 0.2)];
        assert_eq!(
            score_reorder(&off, &truth).unwrap().exact_match_fraction,
            0.0
        );
    }

    #[test]
    fn kendall_against_brute_force_rank_formula() {
        // Without ties τ-b reduces to 1 − 4·inversions / (n(n−1)).
        let x = [3, 1, 4, 0, 2];
        let y = [0, 1, 2, 3, 4];
        let mut inversions = 0;
        for i in 0..5 {
            for j in i + 1..5 {
                if (x[i] < x[j]) != (y[i] < y[j]) {
                    inversions += 1;
                }
            }
        }
        let expected = 1.0 - 4.0 * inversions as f64 / 20.0;
        assert!((kendall_tau_b(&x, &y) - expected).abs() < 1e-12);
        assert_eq!(kendall_tau_b(&[1], &[1]), 1.0);
    }

    #[test]
    fn histogram_bins() {
        let scores = [
            OverlapScore {
                exact_match_fraction: 1.0,
                kendall_tau: 1.0,
            },
            OverlapScore {
                exact_match_fraction: 0.3,
                kendall_tau: 0.0,
            },
            OverlapScore {
                exact_match_fraction: 0.0,
                kendall_tau: -1.0,
            },
            OverlapScore {
                exact_match_fraction: 0.7,
                kendall_tau: 0.5,
            },
        ];
        let h = OverlapHistogram::from_scores(&scores);
        assert_eq!(h.bins[10], 1);
        assert_eq!(h.bins[3], 1);
        assert_eq!(h.bins[0], 1);
        assert_eq!(h.bins[7], 1);
        assert_eq!(h.count, 4);
        assert_eq!(OverlapHistogram::bin_label(10), "1.0");
        assert_eq!(OverlapHistogram::bin_label(2), "[0.2,0.3)");
    }

    #[test]
    fn export_record_roundtrip() {
        let f = frames(&seconds(8));
        let (seq, pi) = shuffle_with_timestamps(&f, 2, 5).unwrap();
        let prompt = build_reorder_prompt(&seq);
        let rec = SopeRecord::new(&seq, &prompt);
        assert_eq!(rec.pi, pi);
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains("\"slot_ts\""));
        assert!(json.contains("\"target_ranges\":[["));
        let mut buf = Vec::new();
        write_jsonl(&mut buf, std::slice::from_ref(&rec)).unwrap();
        let back: Vec<SopeRecord> = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, vec![rec.clone()]);

        let pred = ReorderPrediction {
            ranges: rec.target_ranges.clone(),
        };
        let scores = evaluate(&[pred], &back).unwrap();
        assert_eq!(scores[0].exact_match_fraction, 1.0);
        assert!(evaluate(&[], &back).is_err());
    }
}
