use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DagError {
    #[error("duplicate task name `{0}`")]
    DuplicateTask(String),
    #[error("edge references unknown task `{0}`")]
    UnknownTask(String),
    #[error("cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("no payload registered under `{0}`")]
    UnknownPayload(String),
    #[error("unknown run `{0}`")]
    UnknownRun(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    /// Registry key of the callable.
    pub payload: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, payload: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            payload: payload.into(),
            params: serde_json::Value::Null,
        }
    }

    pub fn with_params(mut self, params: serde_json::Value) -> Self {
        self.params = params;
        self
    }
}

/// The on-disk DAG definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DagSpec {
    pub dag_id: String,
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    #[serde(default)]
    pub schedule_seconds: Option<u64>,
}

/// A validated, acyclic task graph. Task indices follow the order of `DagSpec::tasks`.
#[derive(Clone, Debug)]
pub struct TaskDag {
    spec: DagSpec,
    upstream: Vec<Vec<usize>>,
    downstream: Vec<Vec<usize>>,
}

impl TaskDag {
    pub fn new(spec: DagSpec) -> Result<Self, DagError> {
        let mut index = HashMap::new();
        for (i, t) in spec.tasks.iter().enumerate() {
            if index.insert(t.name.clone(), i).is_some() {
                return Err(DagError::DuplicateTask(t.name.clone()));
            }
        }
        let n = spec.tasks.len();
        let mut upstream = vec![Vec::new(); n];
        let mut downstream = vec![Vec::new(); n];
        for (up, down) in &spec.edges {
            let u = *index.get(up).ok_or_else(|| DagError::UnknownTask(up.clone()))?;
            let d = *index.get(down).ok_or_else(|| DagError::UnknownTask(down.clone()))?;
            if !downstream[u].contains(&d) {
                downstream[u].push(d);
                upstream[d].push(u);
            }
        }
        let dag = Self {
            spec,
            upstream,
            downstream,
        };
        if let Some(cycle) = dag.find_cycle() {
            return Err(DagError::Cycle(cycle.into_iter().map(|i| dag.name(i).to_string()).collect()));
        }
        Ok(dag)
    }

    /// Chain of tasks built from `(name, payload)` pairs, each depending on
    /// the previous one.
    pub fn chain(dag_id: &str, tasks: &[(&str, &str)]) -> Result<Self, DagError> {
        Self::new(DagSpec {
            dag_id: dag_id.into(),
            tasks: tasks.iter().map(|(n, p)| TaskSpec::new(*n, *p)).collect(),
            edges: tasks.windows(2).map(|w| (w[0].0.into(), w[1].0.into())).collect(),
            schedule_seconds: None,
        })
    }

    pub fn spec(&self) -> &DagSpec {
        &self.spec
    }

    pub fn id(&self) -> &str {
        &self.spec.dag_id
    }

    pub fn len(&self) -> usize {
        self.spec.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spec.tasks.is_empty()
    }

    pub fn task(&self, i: usize) -> &TaskSpec {
        &self.spec.tasks[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.spec.tasks[i].name
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.spec.tasks.iter().position(|t| t.name == name)
    }

    pub fn upstream(&self, i: usize) -> &[usize] {
        &self.upstream[i]
    }

    pub fn downstream(&self, i: usize) -> &[usize] {
        &self.downstream[i]
    }

    /// Every task reachable from `i` along edges, excluding `i`.
    pub fn descendants(&self, i: usize) -> Vec<usize> {
        let mut seen = vec![false; self.len()];
        let mut stack = self.downstream[i].clone();
        let mut out = Vec::new();
        while let Some(t) = stack.pop() {
            if !std::mem::replace(&mut seen[t], true) {
                out.push(t);
                stack.extend(&self.downstream[t]);
            }
        }
        out.sort_unstable();
        out
    }

    fn find_cycle(&self) -> Option<Vec<usize>> {
        // 0 unvisited, 1 on the stack, 2 done
        let mut color = vec![0u8; self.len()];
        let mut path = Vec::new();
        for start in 0..self.len() {
            if color[start] == 0 {
                if let Some(c) = self.dfs(start, &mut color, &mut path) {
                    return Some(c);
                }
            }
        }
        None
    }

    fn dfs(&self, node: usize, color: &mut [u8], path: &mut Vec<usize>) -> Option<Vec<usize>> {
        color[node] = 1;
        path.push(node);
        for &next in &self.downstream[node] {
            match color[next] {
                1 => {
                    let from = path.iter().position(|&p| p == next).expect("on stack");
                    let mut cycle = path[from..].to_vec();
                    cycle.push(next);
                    return Some(cycle);
                }
                0 => {
                    if let Some(c) = self.dfs(next, color, path) {
                        return Some(c);
                    }
                }
                _ => {}
            }
        }
        path.pop();
        color[node] = 2;
        None
    }
}
