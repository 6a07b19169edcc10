#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use hiermine::align::EditOp;

/// Edit distance of prefixes straight from the recursive definition,
/// memoised on the prefix lengths.
pub struct Oracle<'a, T> {
    a: &'a [T],
    b: &'a [T],
    memo: Vec<Option<usize>>,
}

impl<'a, T: PartialEq> Oracle<'a, T> {
    pub fn new(a: &'a [T], b: &'a [T]) -> Self {
        Self {
            a,
            b,
            memo: vec![None; (a.len() + 1) * (b.len() + 1)],
        }
    }

    pub fn dist(&mut self, i: usize, j: usize) -> usize {
        let key = i * (self.b.len() + 1) + j;
        if let Some(d) = self.memo[key] {
            return d;
        }
        let d = if i == 0 {
            j
        } else if j == 0 {
            i
        } else {
            let sub = self.dist(i - 1, j - 1) + usize::from(self.a[i - 1] != self.b[j - 1]);
            let del = self.dist(i - 1, j) + 1;
            let ins = self.dist(i, j - 1) + 1;
            sub.min(del).min(ins)
        };
        self.memo[key] = Some(d);
        d
    }

    /// A minimal script picked from the back: an equal last pair is always
    /// kept; otherwise the first optimal move among replace, delete, insert.
    pub fn script(&mut self) -> Vec<EditOp> {
        let (mut i, mut j) = (self.a.len(), self.b.len());
        let mut ops = Vec::new();
        while i > 0 || j > 0 {
            let here = self.dist(i, j);
            if i > 0 && j > 0 && self.a[i - 1] == self.b[j - 1] {
                ops.push(EditOp::Keep(i - 1, j - 1));
                i -= 1;
                j -= 1;
            } else if i > 0 && j > 0 && self.dist(i - 1, j - 1) + 1 == here {
                ops.push(EditOp::Replace(i - 1, j - 1));
                i -= 1;
                j -= 1;
            } else if i > 0 && self.dist(i - 1, j) + 1 == here {
                ops.push(EditOp::Delete(i - 1));
                i -= 1;
            } else {
                ops.push(EditOp::Insert(j - 1));
                j -= 1;
            }
        }
        ops.reverse();
        ops
    }
}

pub fn oracle_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    Oracle::new(a, b).dist(a.len(), b.len())
}

pub fn oracle_script<T: PartialEq>(a: &[T], b: &[T]) -> Vec<EditOp> {
    Oracle::new(a, b).script()
}

/// Tags carried along an oracle script.
pub fn oracle_tags<G: Clone>(tags: &[G], ops: &[EditOp], fill: G) -> Vec<G> {
    let mut out = Vec::new();
    for op in ops {
        match *op {
            EditOp::Keep(i, _) | EditOp::Replace(i, _) => out.push(tags[i].clone()),
            EditOp::Insert(_) => out.push(fill.clone()),
            EditOp::Delete(_) => {}
        }
    }
    out
}

pub fn hiermine(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiermine"))
        .args(args)
        .current_dir(dir)
        .env_remove("HIERMINE_SEED")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}
