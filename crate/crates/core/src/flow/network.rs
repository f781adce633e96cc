use std::collections::HashMap;

use super::{OnlineWorker, OpenTask, TaskSet};
use crate::model::{Point, TaskId, WorkerId};

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerNode {
    pub node: usize,
    pub worker: WorkerId,
    pub position: Point,
    pub max_tasks: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSetNode {
    pub node: usize,
    /// Index into [`FlowNetwork::workers`].
    pub owner: usize,
    pub set: TaskSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskNode {
    pub node: usize,
    pub task: TaskId,
    pub point: Point,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub from: usize,
    pub to: usize,
    pub capacity: u32,
    pub unit_cost: f64,
}

/// Worker → task set → task network.
///
/// Node 0 is the source and the last node is the sink. Worker arcs carry
/// up to `max_tasks` units; a set arc carries one unit per task in the set at
/// `per_km * tour_km / |set|` each, so saturating a set costs its full payment.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowNetwork {
    pub source: usize,
    pub sink: usize,
    pub workers: Vec<WorkerNode>,
    pub task_sets: Vec<TaskSetNode>,
    pub tasks: Vec<TaskNode>,
    pub arcs: Vec<Arc>,
    pub per_km: f64,
}

impl FlowNetwork {
    pub fn node_count(&self) -> usize {
        self.sink + 1
    }
}

/// Sets naming unknown workers or tasks are skipped.
pub fn build_network(
    workers: &[OnlineWorker],
    task_sets: &[TaskSet],
    open: &[OpenTask],
    per_km: f64,
) -> FlowNetwork {
    let source = 0;
    let mut next = 1;
    let mut arcs = Vec::new();

    let mut worker_slot = HashMap::new();
    let worker_nodes: Vec<WorkerNode> = workers
        .iter()
        .enumerate()
        .map(|(i, w)| {
            worker_slot.insert(w.id, i);
            let node = next;
            next += 1;
            arcs.push(Arc {
                from: source,
                to: node,
                capacity: w.max_tasks,
                unit_cost: 0.0,
            });
            WorkerNode {
                node,
                worker: w.id,
                position: w.position,
                max_tasks: w.max_tasks,
            }
        })
        .collect();

    let task_index: HashMap<TaskId, usize> =
        open.iter().enumerate().map(|(i, t)| (t.id, i)).collect();
    let usable: Vec<&TaskSet> = task_sets
        .iter()
        .filter(|s| {
            !s.tasks.is_empty()
                && worker_slot.contains_key(&s.worker)
                && s.tasks.iter().all(|t| task_index.contains_key(t))
        })
        .collect();
    let first_task_node = next + usable.len();

    let mut set_nodes = Vec::with_capacity(usable.len());
    for s in usable {
        let node = next;
        next += 1;
        let owner = worker_slot[&s.worker];
        let size = s.tasks.len();
        arcs.push(Arc {
            from: worker_nodes[owner].node,
            to: node,
            capacity: size as u32,
            unit_cost: per_km * s.tour_km / size as f64,
        });
        for t in &s.tasks {
            arcs.push(Arc {
                from: node,
                to: first_task_node + task_index[t],
                capacity: 1,
                unit_cost: 0.0,
            });
        }
        set_nodes.push(TaskSetNode {
            node,
            owner,
            set: s.clone(),
        });
    }

    let task_nodes: Vec<TaskNode> = open
        .iter()
        .enumerate()
        .map(|(i, t)| TaskNode {
            node: first_task_node + i,
            task: t.id,
            point: t.point,
        })
        .collect();
    let sink = first_task_node + open.len();
    for t in &task_nodes {
        arcs.push(Arc {
            from: t.node,
            to: sink,
            capacity: 1,
            unit_cost: 0.0,
        });
    }

    FlowNetwork {
        source,
        sink,
        workers: worker_nodes,
        task_sets: set_nodes,
        tasks: task_nodes,
        arcs,
        per_km,
    }
}
