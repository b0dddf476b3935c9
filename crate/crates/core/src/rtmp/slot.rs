//! Capacity-1 latest-wins hand-off between a producer and one consumer.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

struct Inner<T> {
    item: Option<T>,
    closed: bool,
    overwritten: u64,
}

struct Shared<T> {
    inner: Mutex<Inner<T>>,
    ready: Condvar,
}

pub struct LatestSender<T> {
    shared: Arc<Shared<T>>,
}

pub struct LatestReceiver<T> {
    shared: Arc<Shared<T>>,
}

pub fn latest_slot<T>() -> (LatestSender<T>, LatestReceiver<T>) {
    let shared = Arc::new(Shared {
        inner: Mutex::new(Inner {
            item: None,
            closed: false,
            overwritten: 0,
        }),
        ready: Condvar::new(),
    });
    (
        LatestSender {
            shared: Arc::clone(&shared),
        },
        LatestReceiver { shared },
    )
}

impl<T> LatestSender<T> {
    /// Stores `item`, replacing any unconsumed one. Returns true if an item
    /// was overwritten. Never blocks on the consumer.
    pub fn put(&self, item: T) -> bool {
        let mut g = self.shared.inner.lock().unwrap();
        let replaced = g.item.replace(item).is_some();
        if replaced {
            g.overwritten += 1;
        }
        drop(g);
        self.shared.ready.notify_one();
        replaced
    }

    pub fn close(&self) {
        self.shared.inner.lock().unwrap().closed = true;
        self.shared.ready.notify_all();
    }

    pub fn overwritten(&self) -> u64 {
        self.shared.inner.lock().unwrap().overwritten
    }
}

impl<T> Drop for LatestSender<T> {
    fn drop(&mut self) {
        self.close();
    }
}

impl<T> LatestReceiver<T> {
    /// Blocks until an item is available or the sender closes. A pending
    /// item is still delivered after close.
    pub fn recv(&self) -> Option<T> {
        let mut g = self.shared.inner.lock().unwrap();
        loop {
            if let Some(item) = g.item.take() {
                return Some(item);
            }
            if g.closed {
                return None;
            }
            g = self.shared.ready.wait(g).unwrap();
        }
    }

    /// True once the sender closed and no item is pending.
    pub fn is_closed(&self) -> bool {
        let g = self.shared.inner.lock().unwrap();
        g.closed && g.item.is_none()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<T> {
        let g = self.shared.inner.lock().unwrap();
        let (mut g, _) = self
            .shared
            .ready
            .wait_timeout_while(g, timeout, |i| i.item.is_none() && !i.closed)
            .unwrap();
        g.item.take()
    }
}

impl<T> Iterator for LatestReceiver<T> {
    type Item = T;

    fn next(&mut self) -> Option<T> {
        self.recv()
    }
}
