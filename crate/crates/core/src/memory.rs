//! First-in-last-out pulse memory and the ideal memory channel.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TrekError};
use crate::hilbert::Ket;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Alice,
    Bob,
}

/// Order in which stored slots are replayed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecallOrder {
    /// Reverse of store order.
    #[default]
    Filo,
    /// Store order; a single recycled slot suffices.
    Fifo,
}

/// Slot bookkeeping for the pulse memory. The amplitudes of stored pulses
/// stay in the joint register; after Alice's measurement the conditioned
/// pulse-register state can be attached as `contents`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiloMemory {
    slots: Vec<usize>,
    side: Side,
    teleported: bool,
    recalled: Vec<usize>,
    #[serde(skip)]
    contents: Option<Ket>,
}

impl Default for FiloMemory {
    fn default() -> Self {
        Self::new()
    }
}

impl FiloMemory {
    pub fn new() -> Self {
        FiloMemory {
            slots: Vec::new(),
            side: Side::Alice,
            teleported: false,
            recalled: Vec::new(),
            contents: None,
        }
    }

    pub fn store(&mut self, slot: usize) -> Result<()> {
        if self.teleported {
            return Err(TrekError::AlreadyTeleported);
        }
        if self.slots.contains(&slot) || self.recalled.contains(&slot) {
            return Err(TrekError::SlotAlreadyStored(slot));
        }
        self.slots.push(slot);
        Ok(())
    }

    /// Removes and returns the next slot in the given order.
    pub fn recall(&mut self, order: RecallOrder) -> Result<usize> {
        if self.slots.is_empty() {
            return Err(TrekError::InvalidSlot(self.recalled.len()));
        }
        let slot = match order {
            RecallOrder::Filo => self.slots.pop().expect("nonempty"),
            RecallOrder::Fifo => self.slots.remove(0),
        };
        self.recalled.push(slot);
        Ok(slot)
    }

    /// Slots still held, in store order.
    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    /// Slots already replayed, in recall order.
    pub fn recalled(&self) -> &[usize] {
        &self.recalled
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn is_teleported(&self) -> bool {
        self.teleported
    }

    pub fn contents(&self) -> Option<&Ket> {
        self.contents.as_ref()
    }

    pub fn set_contents(&mut self, contents: Ket) {
        self.contents = Some(contents);
    }
}

/// Moves Alice's memory to Bob unchanged.
pub fn teleport_memory(mut mem: FiloMemory) -> Result<FiloMemory> {
    if mem.teleported || mem.side == Side::Bob {
        return Err(TrekError::AlreadyTeleported);
    }
    mem.side = Side::Bob;
    mem.teleported = true;
    Ok(mem)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_memory_teleports() {
        let bob = teleport_memory(FiloMemory::new()).unwrap();
        assert!(bob.is_empty());
        assert_eq!(bob.side(), Side::Bob);
        assert!(bob.is_teleported());
        assert_eq!(teleport_memory(bob), Err(TrekError::AlreadyTeleported));
    }

    #[test]
    fn recall_is_reverse_of_store() {
        let mut mem = FiloMemory::new();
        for s in 0..3 {
            mem.store(s).unwrap();
        }
        let contents = Ket::basis(8, 3);
        mem.set_contents(contents.clone());
        let mut bob = teleport_memory(mem).unwrap();
        assert_eq!(bob.slots(), &[0, 1, 2]);
        assert_eq!(bob.contents(), Some(&contents));
        let order: Vec<_> = (0..3).map(|_| bob.recall(RecallOrder::Filo).unwrap()).collect();
        assert_eq!(order, vec![2, 1, 0]);
        assert!(bob.recall(RecallOrder::Filo).is_err());
    }

    #[test]
    fn slot_stored_once() {
        let mut mem = FiloMemory::new();
        mem.store(1).unwrap();
        assert_eq!(mem.store(1), Err(TrekError::SlotAlreadyStored(1)));
        mem.recall(RecallOrder::Fifo).unwrap();
        assert_eq!(mem.store(1), Err(TrekError::SlotAlreadyStored(1)));
    }
}
