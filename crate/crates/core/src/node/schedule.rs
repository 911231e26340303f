//! Offset-ordered task queue run once per sampling pass.

use std::cmp::Ordering;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskOffset {
    /// Milliseconds after the sample trigger.
    At(u32),
    /// After every timed task.
    Last,
}

impl TaskOffset {
    fn key(self) -> u64 {
        match self {
            TaskOffset::At(ms) => ms as u64,
            TaskOffset::Last => u64::MAX,
        }
    }

    pub fn millis(self) -> Option<u32> {
        match self {
            TaskOffset::At(ms) => Some(ms),
            TaskOffset::Last => None,
        }
    }
}

impl Ord for TaskOffset {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for TaskOffset {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task<A> {
    pub offset: TaskOffset,
    pub component: &'static str,
    pub action: A,
}

#[derive(Debug, Clone, Default)]
pub struct TaskSchedule<A> {
    tasks: Vec<Task<A>>,
}

impl<A> TaskSchedule<A> {
    pub fn new() -> Self {
        TaskSchedule { tasks: Vec::new() }
    }

    pub fn push(&mut self, offset: TaskOffset, component: &'static str, action: A) -> &mut Self {
        self.tasks.push(Task {
            offset,
            component,
            action,
        });
        self
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Tasks in execution order: by offset, ties in insertion order, `Last` at the end.
    pub fn execution_order(&self) -> Vec<&Task<A>> {
        let mut order: Vec<&Task<A>> = self.tasks.iter().collect();
        order.sort_by_key(|t| t.offset);
        order
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleAction {
    StartReport,
    StartHumidityConversion,
    ComputeOccupancy,
    WakeLight,
    ReadAcceleration,
    ReadHumidityStartTemperature,
    ReadTemperature,
    ReadLight,
    StoreReport,
}

/// The standard sampling pass, in the order drivers enqueue it.
pub fn standard_sample_schedule() -> TaskSchedule<SampleAction> {
    use SampleAction::*;
    use TaskOffset::{At, Last};
    let mut s = TaskSchedule::new();
    s.push(At(0), "Reporting", StartReport)
        .push(At(1), "Temp/Humid", StartHumidityConversion)
        .push(At(1), "PIR", ComputeOccupancy)
        .push(At(1), "Light", WakeLight)
        .push(At(1), "Accelerometer", ReadAcceleration)
        .push(At(17), "Temp/Humid", ReadHumidityStartTemperature)
        .push(At(67), "Temp/Humid", ReadTemperature)
        .push(At(106), "Light", ReadLight)
        .push(Last, "Reporting", StoreReport);
    s
}
