//! Bounded drop-oldest queue shared by broker subscriptions and verticle mailboxes.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

#[derive(Debug)]
struct State<T> {
    items: VecDeque<T>,
    closed: bool,
    accepted: u64,
    dropped: u64,
}

/// A producer never waits on this queue: once `capacity` is reached the
/// oldest item is discarded and counted.
#[derive(Debug)]
pub struct Mailbox<T> {
    capacity: usize,
    state: Mutex<State<T>>,
    ready: Condvar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MailboxStats {
    pub accepted: u64,
    pub dropped: u64,
    pub queued: usize,
}

impl<T> Mailbox<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            state: Mutex::new(State {
                items: VecDeque::new(),
                closed: false,
                accepted: 0,
                dropped: 0,
            }),
            ready: Condvar::new(),
        }
    }

    /// Returns false if the mailbox is closed and the item was discarded.
    pub fn push(&self, item: T) -> bool {
        let mut st = self.state.lock().unwrap();
        if st.closed {
            return false;
        }
        if st.items.len() >= self.capacity {
            st.items.pop_front();
            st.dropped += 1;
        }
        st.items.push_back(item);
        st.accepted += 1;
        drop(st);
        self.ready.notify_one();
        true
    }

    pub fn try_recv(&self) -> Option<T> {
        self.state.lock().unwrap().items.pop_front()
    }

    /// Blocks until an item arrives; `None` once closed and drained.
    pub fn recv(&self) -> Option<T> {
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(item) = st.items.pop_front() {
                return Some(item);
            }
            if st.closed {
                return None;
            }
            st = self.ready.wait(st).unwrap();
        }
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<T> {
        let deadline = std::time::Instant::now() + timeout;
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(item) = st.items.pop_front() {
                return Some(item);
            }
            let now = std::time::Instant::now();
            if st.closed || now >= deadline {
                return None;
            }
            st = self.ready.wait_timeout(st, deadline - now).unwrap().0;
        }
    }

    pub fn drain(&self) -> Vec<T> {
        self.state.lock().unwrap().items.drain(..).collect()
    }

    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.ready.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.state.lock().unwrap().closed
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> MailboxStats {
        let st = self.state.lock().unwrap();
        MailboxStats { accepted: st.accepted, dropped: st.dropped, queued: st.items.len() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drops_oldest_on_overflow() {
        let m = Mailbox::new(2);
        for i in 0..5 {
            assert!(m.push(i));
        }
        assert_eq!(m.drain(), vec![3, 4]);
        assert_eq!(m.stats(), MailboxStats { accepted: 5, dropped: 3, queued: 0 });
    }

    #[test]
    fn closed_mailbox_rejects_and_drains() {
        let m = Mailbox::new(4);
        m.push(1);
        m.close();
        assert!(!m.push(2));
        assert_eq!(m.recv(), Some(1));
        assert_eq!(m.recv(), None);
    }

    #[test]
    fn recv_wakes_across_threads() {
        let m = std::sync::Arc::new(Mailbox::new(4));
        let m2 = m.clone();
        let h = std::thread::spawn(move || m2.recv());
        std::thread::sleep(Duration::from_millis(10));
        m.push(7);
        assert_eq!(h.join().unwrap(), Some(7));
        assert_eq!(m.recv_timeout(Duration::from_millis(5)), None);
    }
}
