//! Hierarchical runtime statistics.
//!
//! Ranks run one per thread, so each rank owns a thread-local timer tree.
//! Code brackets work with [`scoped`] guards; the tree nests by the guard
//! stack. Reports are emitted in the fixed logfile layout: a header line,
//! then one row per timer with seconds in scientific notation, the percent
//! of the solve total (abs), the percent of the parent for depth >= 3, and
//! the call count.

use std::cell::RefCell;
use std::fmt::Write as _;
use std::time::Instant;

#[derive(Debug, Clone)]
struct Node {
    name: String,
    parent: usize,
    children: Vec<usize>,
    elapsed: f64,
    count: u64,
}

#[derive(Debug)]
pub struct TimerTree {
    nodes: Vec<Node>,
    stack: Vec<usize>,
}

impl Default for TimerTree {
    fn default() -> Self {
        Self::new()
    }
}

impl TimerTree {
    pub fn new() -> Self {
        TimerTree {
            nodes: vec![Node {
                name: String::new(),
                parent: usize::MAX,
                children: Vec::new(),
                elapsed: 0.0,
                count: 0,
            }],
            stack: vec![0],
        }
    }

    fn child(&mut self, parent: usize, name: &str) -> usize {
        if let Some(&c) = self.nodes[parent]
            .children
            .iter()
            .find(|&&c| self.nodes[c].name == name)
        {
            return c;
        }
        let idx = self.nodes.len();
        self.nodes.push(Node {
            name: name.to_string(),
            parent,
            children: Vec::new(),
            elapsed: 0.0,
            count: 0,
        });
        self.nodes[parent].children.push(idx);
        idx
    }

    fn push(&mut self, name: &str) -> usize {
        let top = *self.stack.last().unwrap();
        let idx = self.child(top, name);
        self.stack.push(idx);
        idx
    }

    fn pop(&mut self, idx: usize, secs: f64) {
        debug_assert_eq!(*self.stack.last().unwrap(), idx);
        self.stack.pop();
        self.nodes[idx].elapsed += secs;
        self.nodes[idx].count += 1;
    }

    /// Manually accumulate a path ("solve/pressureSolve/rhs"), for tests
    /// and synthetic reports.
    pub fn add_path(&mut self, path: &str, secs: f64, count: u64) {
        let mut at = 0;
        for part in path.split('/') {
            at = self.child(at, part);
        }
        self.nodes[at].elapsed += secs;
        self.nodes[at].count += count;
    }

    pub fn snapshot(&self) -> TimerSnapshot {
        let mut rows = Vec::new();
        fn walk(tree: &TimerTree, at: usize, depth: usize, rows: &mut Vec<TimerRow>) {
            for &c in &tree.nodes[at].children {
                rows.push(TimerRow {
                    depth,
                    name: tree.nodes[c].name.clone(),
                    seconds: tree.nodes[c].elapsed,
                    count: tree.nodes[c].count,
                    parent_seconds: if tree.nodes[at].parent == usize::MAX {
                        None
                    } else {
                        Some(tree.nodes[at].elapsed)
                    },
                });
                walk(tree, c, depth + 1, rows);
            }
        }
        walk(self, 0, 1, &mut rows);
        TimerSnapshot { rows }
    }

    pub fn reset(&mut self) {
        self.nodes.truncate(1);
        self.nodes[0].children.clear();
        self.nodes[0].elapsed = 0.0;
        self.nodes[0].count = 0;
        self.stack.clear();
        self.stack.push(0);
    }

    /// Elapsed seconds of a path, 0 if absent.
    pub fn elapsed_of(&self, path: &str) -> f64 {
        let mut at = 0;
        for part in path.split('/') {
            match self.nodes[at]
                .children
                .iter()
                .find(|&&c| self.nodes[c].name == part)
            {
                Some(&c) => at = c,
                None => return 0.0,
            }
        }
        self.nodes[at].elapsed
    }
}

#[derive(Debug, Clone)]
pub struct TimerRow {
    pub depth: usize,
    pub name: String,
    pub seconds: f64,
    pub count: u64,
    pub parent_seconds: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TimerSnapshot {
    pub rows: Vec<TimerRow>,
}

thread_local! {
    static TREE: RefCell<TimerTree> = RefCell::new(TimerTree::new());
}

/// RAII guard timing one named scope on this rank's tree.
pub struct ScopedTimer {
    idx: usize,
    start: Instant,
}

pub fn scoped(name: &str) -> ScopedTimer {
    let idx = TREE.with(|t| t.borrow_mut().push(name));
    ScopedTimer {
        idx,
        start: Instant::now(),
    }
}

impl Drop for ScopedTimer {
    fn drop(&mut self) {
        let secs = self.start.elapsed().as_secs_f64();
        TREE.with(|t| t.borrow_mut().pop(self.idx, secs));
    }
}

/// Add elapsed time to a path without an active guard.
pub fn add_path(path: &str, secs: f64, count: u64) {
    TREE.with(|t| t.borrow_mut().add_path(path, secs, count));
}

pub fn snapshot() -> TimerSnapshot {
    TREE.with(|t| t.borrow().snapshot())
}

pub fn reset() {
    TREE.with(|t| t.borrow_mut().reset());
}

pub fn elapsed_of(path: &str) -> f64 {
    TREE.with(|t| t.borrow().elapsed_of(path))
}

/// Scientific notation with 5 decimals and a signed 2-digit exponent
/// (the logfile float style).
pub fn sci5(x: f64) -> String {
    if x == 0.0 {
        return "0.00000e+00".into();
    }
    let mag = x.abs();
    let mut exp = mag.log10().floor() as i32;
    let mut mant = x / 10f64.powi(exp);
    // rounding may push the mantissa to 10.0
    if mant.abs() >= 10.0 - 5e-6 {
        mant /= 10.0;
        exp += 1;
    }
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{:.5}e{}{:02}", mant, sign, exp.abs())
}

/// Per-rank summary values reduced across the communicator for the report.
#[derive(Debug, Clone, Copy)]
pub struct SolveSummary {
    pub solve_min: f64,
    pub solve_max: f64,
    pub flops_per_rank: f64,
}

/// Render the statistics block. `snapshot` must contain a top-level
/// "solve" row; abs percentages are relative to its total.
pub fn emit_stats(
    snapshot: &TimerSnapshot,
    step: u64,
    total_elapsed: f64,
    summary: Option<SolveSummary>,
) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "runtime statistics (step= {}  totalElapsed= {:.2}s):",
        step, total_elapsed
    );
    out.push('\n');
    let _ = writeln!(out, "name                    time          abs");
    let solve_total = snapshot
        .rows
        .iter()
        .find(|r| r.depth == 1 && r.name == "solve")
        .map(|r| r.seconds)
        .unwrap_or(0.0);
    for row in &snapshot.rows {
        let mut line = String::new();
        for _ in 0..row.depth {
            line.push_str("  ");
        }
        line.push_str(&row.name);
        if line.len() >= 24 {
            line.push(' ');
        }
        while line.len() < 24 {
            line.push(' ');
        }
        line.push_str(&sci5(row.seconds));
        line.push('s');
        let abs = if solve_total > 0.0 {
            100.0 * row.seconds / solve_total
        } else {
            0.0
        };
        let _ = write!(line, "  {:>5.1}", abs);
        if row.depth >= 3 {
            let parent = row.parent_seconds.unwrap_or(0.0);
            let pp = if parent > 0.0 {
                100.0 * row.seconds / parent
            } else {
                0.0
            };
            let _ = write!(line, "{:>6.1}", pp);
        }
        let target = 55usize;
        let pad = target.saturating_sub(line.len());
        let _ = write!(line, "{:>width$}", row.count, width = pad.max(1));
        let _ = writeln!(out, "{}", line.trim_end());
        // the solve row is followed by min/max/flops summary lines
        if row.depth == 1 && row.name == "solve" {
            if let Some(s) = summary {
                let _ = writeln!(out, "    min                 {}s", sci5(s.solve_min));
                let _ = writeln!(out, "    max                 {}s", sci5(s.solve_max));
                let _ = writeln!(out, "    flops/rank          {}", sci5(s.flops_per_rank));
            }
        }
    }
    out
}
