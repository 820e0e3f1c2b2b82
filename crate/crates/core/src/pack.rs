//! Fixed-length sequence packing for mixed audio/text training batches.
//!
//! Items are queued per modality in descending length order. Packs alternate
//! which modality leads (even packs lead with audio), and the leading draw
//! reserves room for the shortest item of the other modality so packs stay
//! mixed instead of being monopolized by long items. After the lead, draws
//! alternate modalities, always taking the longest remaining item that fits;
//! a modality with no fitting item yields its turn. Items longer than the
//! pack capacity are rejected up front. The whole procedure is deterministic:
//! ties in length break toward the smaller id.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PackError {
    #[error("pack capacity must be positive")]
    ZeroCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Audio,
    Text,
}

impl Modality {
    fn other(self) -> Self {
        match self {
            Modality::Audio => Modality::Text,
            Modality::Text => Modality::Audio,
        }
    }
}

/// One sequence to pack. The final `target_len` tokens are the training
/// target; everything before them is context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackItem {
    pub id: String,
    pub modality: Modality,
    pub len: u32,
    pub target_len: u32,
}

/// An item's placement inside a pack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedSpan {
    pub id: String,
    pub modality: Modality,
    pub offset: u32,
    pub len: u32,
    pub target_len: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pack {
    pub index: usize,
    pub capacity: u32,
    pub used: u32,
    /// Contains both modalities.
    pub mixed: bool,
    pub spans: Vec<PackedSpan>,
}

impl Pack {
    /// Per-position loss mask over the full pack width: 1 on each span's
    /// target tokens, 0 on context and padding.
    pub fn loss_mask(&self) -> Vec<u8> {
        let mut mask = vec![0u8; self.capacity as usize];
        for span in &self.spans {
            let target_start = (span.offset + span.len - span.target_len) as usize;
            for slot in &mut mask[target_start..(span.offset + span.len) as usize] {
                *slot = 1;
            }
        }
        mask
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PackOutcome {
    pub packs: Vec<Pack>,
    /// `(id, reason)` for items that could not be packed.
    pub rejected: Vec<(String, String)>,
}

impl PackOutcome {
    pub fn mean_utilization(&self) -> f64 {
        if self.packs.is_empty() {
            return 0.0;
        }
        let used: u64 = self.packs.iter().map(|p| p.used as u64).sum();
        let cap: u64 = self.packs.iter().map(|p| p.capacity as u64).sum();
        used as f64 / cap as f64
    }

    pub fn mixed_fraction(&self) -> f64 {
        if self.packs.is_empty() {
            return 0.0;
        }
        self.packs.iter().filter(|p| p.mixed).count() as f64 / self.packs.len() as f64
    }
}

/// Per-modality queue, sorted by length descending (ties toward smaller id).
struct Queue<'a> {
    items: Vec<&'a PackItem>,
}

impl<'a> Queue<'a> {
    fn new(mut items: Vec<&'a PackItem>) -> Self {
        items.sort_by(|a, b| b.len.cmp(&a.len).then_with(|| a.id.cmp(&b.id)));
        Self { items }
    }

    fn min_len(&self) -> Option<u32> {
        self.items.last().map(|it| it.len)
    }

    /// Removes and returns the longest item with `len <= cap`.
    fn take_fitting(&mut self, cap: u32) -> Option<&'a PackItem> {
        let pos = self.items.partition_point(|it| it.len > cap);
        if pos < self.items.len() {
            Some(self.items.remove(pos))
        } else {
            None
        }
    }

    fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Packs items into fixed-capacity sequences. Every accepted item lands in
/// exactly one pack; no pack exceeds its capacity.
pub fn pack_sequences(items: &[PackItem], capacity: u32) -> Result<PackOutcome, PackError> {
    if capacity == 0 {
        return Err(PackError::ZeroCapacity);
    }
    let mut outcome = PackOutcome::default();
    let mut accepted: Vec<&PackItem> = Vec::with_capacity(items.len());
    for item in items {
        if item.len == 0 {
            outcome.rejected.push((item.id.clone(), "zero-length".into()));
        } else if item.target_len > item.len {
            outcome
                .rejected
                .push((item.id.clone(), "target-longer-than-item".into()));
        } else if item.len > capacity {
            outcome
                .rejected
                .push((item.id.clone(), format!("exceeds-capacity:{capacity}")));
        } else {
            accepted.push(item);
        }
    }
    outcome.rejected.sort();

    let mut audio = Queue::new(
        accepted
            .iter()
            .copied()
            .filter(|it| it.modality == Modality::Audio)
            .collect(),
    );
    let mut text = Queue::new(
        accepted
            .iter()
            .copied()
            .filter(|it| it.modality == Modality::Text)
            .collect(),
    );

    while !(audio.is_empty() && text.is_empty()) {
        let index = outcome.packs.len();
        let lead = if index % 2 == 0 {
            Modality::Audio
        } else {
            Modality::Text
        };

        let mut spans = Vec::new();
        let mut used = 0u32;

        // Lead draw: leave room for the other modality's shortest item, so a
        // long lead cannot lock it out. Fall back to swapping the lead, then
        // to an unreserved draw (any remaining item fits an empty pack).
        let mut drawn_from = None;
        for from in [lead, lead.other()] {
            let reserve = match from {
                Modality::Audio => queue_min(&text),
                Modality::Text => queue_min(&audio),
            };
            let queue = pick(&mut audio, &mut text, from);
            if let Some(item) = queue.take_fitting(capacity.saturating_sub(reserve)) {
                spans.push(place(item, &mut used));
                drawn_from = Some(from);
                break;
            }
        }
        if drawn_from.is_none() {
            for from in [lead, lead.other()] {
                let queue = pick(&mut audio, &mut text, from);
                if let Some(item) = queue.take_fitting(capacity) {
                    spans.push(place(item, &mut used));
                    drawn_from = Some(from);
                    break;
                }
            }
        }
        let first = drawn_from.expect("non-empty queues always yield an unreserved draw");

        // Alternate modalities; a side with nothing fitting yields its turn,
        // and capacity only shrinks, so yielding is permanent.
        let mut turn = first.other();
        loop {
            let remaining = capacity - used;
            if let Some(item) = pick(&mut audio, &mut text, turn).take_fitting(remaining) {
                spans.push(place(item, &mut used));
                turn = turn.other();
            } else if let Some(item) =
                pick(&mut audio, &mut text, turn.other()).take_fitting(remaining)
            {
                spans.push(place(item, &mut used));
                // Drew from turn.other(); alternation hands the next try
                // back to `turn`, so it is unchanged.
            } else {
                break;
            }
        }

        let mixed = spans.iter().any(|s| s.modality == Modality::Audio)
            && spans.iter().any(|s| s.modality == Modality::Text);
        outcome.packs.push(Pack {
            index,
            capacity,
            used,
            mixed,
            spans,
        });
    }
    Ok(outcome)
}

fn queue_min(queue: &Queue) -> u32 {
    queue.min_len().unwrap_or(0)
}

fn pick<'q, 'a>(
    audio: &'q mut Queue<'a>,
    text: &'q mut Queue<'a>,
    which: Modality,
) -> &'q mut Queue<'a> {
    match which {
        Modality::Audio => audio,
        Modality::Text => text,
    }
}

fn place(item: &PackItem, used: &mut u32) -> PackedSpan {
    let span = PackedSpan {
        id: item.id.clone(),
        modality: item.modality,
        offset: *used,
        len: item.len,
        target_len: item.target_len,
    };
    *used += item.len;
    span
}
