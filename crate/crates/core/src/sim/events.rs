use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Time-ordered event queue; ties pop in insertion order.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<(i64, u64, Slot<E>)>>,
    seq: u64,
    now: i64,
}

#[derive(Debug)]
struct Slot<E>(E);

impl<E> PartialEq for Slot<E> {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}
impl<E> Eq for Slot<E> {}
impl<E> PartialOrd for Slot<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Slot<E> {
    fn cmp(&self, _: &Self) -> std::cmp::Ordering {
        std::cmp::Ordering::Equal
    }
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            seq: 0,
            now: i64::MIN,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Time of the last popped event.
    pub fn now(&self) -> i64 {
        self.now
    }

    /// Events may not be scheduled in the past; earlier times are clamped to now.
    pub fn schedule(&mut self, at_ns: i64, event: E) {
        let at = at_ns.max(self.now);
        self.heap.push(Reverse((at, self.seq, Slot(event))));
        self.seq += 1;
    }

    pub fn pop(&mut self) -> Option<(i64, E)> {
        let Reverse((t, _, Slot(e))) = self.heap.pop()?;
        self.now = t;
        Some((t, e))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_then_fifo_order() {
        let mut q = EventQueue::new();
        q.schedule(5, 'a');
        q.schedule(1, 'b');
        q.schedule(5, 'c');
        q.schedule(3, 'd');
        let order: Vec<char> = std::iter::from_fn(|| q.pop().map(|(_, e)| e)).collect();
        assert_eq!(order, vec!['b', 'd', 'a', 'c']);
    }

    #[test]
    fn time_never_goes_backwards() {
        let mut q = EventQueue::new();
        q.schedule(10, 0);
        q.pop();
        q.schedule(4, 1);
        assert_eq!(q.pop(), Some((10, 1)));
    }
}
