use super::RangeSet;

/// Outcome of one data segment at the receiver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AckInfo {
    pub ack: u64,
    /// Up to three SACK blocks, the block holding the latest segment first.
    pub sack_blocks: Vec<(u64, u64)>,
    /// Segment was entirely below `rcv_nxt` or already buffered.
    pub duplicate: bool,
    /// Bytes newly delivered to the application.
    pub new_bytes: u64,
    /// Segment began exactly at `rcv_nxt`.
    pub in_order: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TcpReceiver {
    rcv_nxt: u64,
    buffered: RangeSet,
    /// Most recently touched out-of-order blocks, newest first.
    recent: Vec<(u64, u64)>,
    in_order: u64,
    total: u64,
    duplicates: u64,
}

const MAX_SACK_BLOCKS: usize = 3;

impl TcpReceiver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rcv_nxt(&self) -> u64 {
        self.rcv_nxt
    }

    /// Non-duplicate segments that arrived exactly at `rcv_nxt`.
    pub fn in_order_count(&self) -> u64 {
        self.in_order
    }

    /// Non-duplicate segments received.
    pub fn total_count(&self) -> u64 {
        self.total
    }

    pub fn duplicate_count(&self) -> u64 {
        self.duplicates
    }

    pub fn buffered(&self) -> &RangeSet {
        &self.buffered
    }

    pub fn on_data(&mut self, seq: u64, len: u64) -> AckInfo {
        let end = seq + len;
        let duplicate = end <= self.rcv_nxt || self.buffered.contains(seq, end);
        let mut new_bytes = 0;
        let mut in_order = false;
        if duplicate {
            self.duplicates += 1;
        } else {
            self.total += 1;
            if seq == self.rcv_nxt {
                in_order = true;
                self.in_order += 1;
            }
            if seq <= self.rcv_nxt {
                let before = self.rcv_nxt;
                self.rcv_nxt = end;
                if let Some((_, next)) = self.buffered.take_at(self.rcv_nxt) {
                    self.rcv_nxt = next;
                }
                self.buffered.remove_below(self.rcv_nxt);
                new_bytes = self.rcv_nxt - before;
            } else {
                self.buffered.insert(seq, end);
                if let Some(block) = self.buffered.containing(seq) {
                    self.recent.retain(|b| !(b.0 >= block.0 && b.1 <= block.1));
                    self.recent.insert(0, block);
                }
            }
        }
        self.recent.retain(|b| b.1 > self.rcv_nxt);
        let buffered = &self.buffered;
        self.recent.retain(|b| buffered.contains(b.0, b.1));
        self.recent.truncate(MAX_SACK_BLOCKS);
        AckInfo {
            ack: self.rcv_nxt,
            sack_blocks: self.recent.clone(),
            duplicate,
            new_bytes,
            in_order,
        }
    }
}
