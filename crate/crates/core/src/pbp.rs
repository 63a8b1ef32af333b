//! Width-w permutation branching programs and the Barrington compiler.
//!
//! A program evaluates line 0 first: `B(a) = g_{t-1} ∘ ... ∘ g_0` where each `g_j` is the
//! permutation selected by line `j`.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use crate::circuit::{Assignment, Circuit, NodeKind};
use crate::error::{Error, Result};

pub const MAX_WIDTH: usize = 16;

/// A bijection on `{0, ..., w-1}`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Permutation {
    w: u8,
    img: [u8; MAX_WIDTH],
}

impl Permutation {
    pub fn new(images: &[usize]) -> Result<Permutation> {
        let w = images.len();
        if w == 0 || w > MAX_WIDTH {
            return Err(Error::NotAPermutation(images.to_vec()));
        }
        let mut seen = [false; MAX_WIDTH];
        let mut img = [0u8; MAX_WIDTH];
        for (i, &x) in images.iter().enumerate() {
            if x >= w || seen[x] {
                return Err(Error::NotAPermutation(images.to_vec()));
            }
            seen[x] = true;
            img[i] = x as u8;
        }
        Ok(Permutation { w: w as u8, img })
    }

    pub fn identity(w: usize) -> Permutation {
        assert!(w > 0 && w <= MAX_WIDTH);
        let mut img = [0u8; MAX_WIDTH];
        for (i, x) in img.iter_mut().enumerate().take(w) {
            *x = i as u8;
        }
        Permutation { w: w as u8, img }
    }

    /// The cycle `i -> i + 1 mod w`.
    pub fn rotation(w: usize) -> Permutation {
        let images: Vec<usize> = (0..w).map(|i| (i + 1) % w).collect();
        Permutation::new(&images).unwrap()
    }

    pub fn width(&self) -> usize {
        self.w as usize
    }

    pub fn apply(&self, point: usize) -> usize {
        self.img[point] as usize
    }

    pub fn images(&self) -> Vec<usize> {
        self.img[..self.width()].iter().map(|&x| x as usize).collect()
    }

    pub fn is_identity(&self) -> bool {
        (0..self.width()).all(|i| self.apply(i) == i)
    }

    pub fn inverse(&self) -> Permutation {
        let mut img = [0u8; MAX_WIDTH];
        for i in 0..self.width() {
            img[self.img[i] as usize] = i as u8;
        }
        Permutation { w: self.w, img }
    }

    /// `self ∘ other`: apply `other` first. Widths must agree.
    pub fn after(&self, other: &Permutation) -> Permutation {
        debug_assert_eq!(self.w, other.w);
        let mut img = [0u8; MAX_WIDTH];
        for (i, x) in img.iter_mut().enumerate().take(self.width()) {
            *x = self.img[other.img[i] as usize];
        }
        Permutation { w: self.w, img }
    }

    /// True if the permutation is a single cycle through all `w` points.
    pub fn is_full_cycle(&self) -> bool {
        let mut x = self.apply(0);
        let mut len = 1;
        while x != 0 {
            x = self.apply(x);
            len += 1;
        }
        len == self.width()
    }

    /// Packs the images into one 64-bit word, four bits per point.
    pub fn to_word(&self) -> u64 {
        (0..self.width()).fold(0u64, |acc, i| acc | (self.img[i] as u64) << (4 * i))
    }

    pub fn from_word(w: usize, word: u64) -> Permutation {
        let images: Vec<usize> = (0..w).map(|i| (word >> (4 * i) & 0xf) as usize).collect();
        Permutation::new(&images).expect("packed permutation")
    }

    /// Index of the permutation in lexicographic order of image sequences (Lehmer code).
    pub fn rank(&self) -> usize {
        let w = self.width();
        let mut rank = 0;
        for i in 0..w {
            let smaller = (i + 1..w).filter(|&j| self.img[j] < self.img[i]).count();
            rank = rank * (w - i) + smaller;
        }
        rank
    }

    /// All `w!` permutations in lexicographic order, so `all(w)[p.rank()] == p`.
    pub fn all(w: usize) -> Vec<Permutation> {
        let mut cur: Vec<usize> = (0..w).collect();
        let mut out = vec![Permutation::new(&cur).unwrap()];
        loop {
            let Some(i) = (0..w.saturating_sub(1)).rev().find(|&i| cur[i] < cur[i + 1]) else {
                return out;
            };
            let j = (i + 1..w).rev().find(|&j| cur[j] > cur[i]).unwrap();
            cur.swap(i, j);
            cur[i + 1..].reverse();
            out.push(Permutation::new(&cur).unwrap());
        }
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.images())
    }
}

/// `p ∘ q`: apply `q` first, then `p`.
pub fn compose(p: &Permutation, q: &Permutation) -> Result<Permutation> {
    if p.width() != q.width() {
        return Err(Error::WidthMismatch(p.width(), q.width()));
    }
    Ok(p.after(q))
}

/// One line `(x_var, f, g)`: evaluates to `f` when `x_var = 1`, to `g` otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PbpInstruction {
    pub var: usize,
    pub f: Permutation,
    pub g: Permutation,
}

impl PbpInstruction {
    pub fn select(&self, bit: bool) -> Permutation {
        if bit {
            self.f
        } else {
            self.g
        }
    }

    /// Identity line on `x_0`, used for padding.
    pub fn identity(w: usize) -> PbpInstruction {
        let id = Permutation::identity(w);
        PbpInstruction { var: 0, f: id, g: id }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pbp {
    pub w: usize,
    pub n: usize,
    pub lines: Vec<PbpInstruction>,
    /// Sorted, deduplicated accepting set.
    pub accept: Vec<Permutation>,
}

impl Pbp {
    pub fn new(w: usize, n: usize, lines: Vec<PbpInstruction>, mut accept: Vec<Permutation>) -> Result<Pbp> {
        if w == 0 || w > MAX_WIDTH {
            return Err(Error::InvalidArgument(format!("width {w} outside 1..={MAX_WIDTH}")));
        }
        for line in &lines {
            for p in [line.f, line.g] {
                if p.width() != w {
                    return Err(Error::WidthMismatch(w, p.width()));
                }
            }
            if line.var >= n {
                return Err(Error::InvalidArgument(format!(
                    "line reads x_{} but the program has n = {n}",
                    line.var
                )));
            }
        }
        for p in &accept {
            if p.width() != w {
                return Err(Error::WidthMismatch(w, p.width()));
            }
        }
        accept.sort();
        accept.dedup();
        Ok(Pbp { w, n, lines, accept })
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

fn check_pbp_assignment(b: &Pbp, a: &Assignment) -> Result<()> {
    if a.len() != b.n {
        return Err(Error::AssignmentLength {
            expected: b.n,
            found: a.len(),
        });
    }
    Ok(())
}

/// Composition of the evaluated lines, line 0 applied first.
pub fn eval_pbp(b: &Pbp, a: &Assignment) -> Result<Permutation> {
    check_pbp_assignment(b, a)?;
    Ok(b.lines
        .iter()
        .fold(Permutation::identity(b.w), |acc, line| line.select(a.get(line.var)).after(&acc)))
}

pub fn accepts(b: &Pbp, a: &Assignment) -> Result<bool> {
    let p = eval_pbp(b, a)?;
    Ok(b.accept.binary_search(&p).is_ok())
}

/// Reverses the line order and inverts both branches of every line.
pub fn inverse_program(lines: &[PbpInstruction]) -> Vec<PbpInstruction> {
    lines
        .iter()
        .rev()
        .map(|l| PbpInstruction {
            var: l.var,
            f: l.f.inverse(),
            g: l.g.inverse(),
        })
        .collect()
}

/// The 5-cycle accepted by compiled programs.
pub fn sigma() -> Permutation {
    Permutation::rotation(5)
}

/// Two 5-cycles `(a, b)` whose commutator `a b a⁻¹ b⁻¹` is again a 5-cycle.
fn commutator_pair() -> (Permutation, Permutation, Permutation) {
    static PAIR: OnceLock<(Permutation, Permutation, Permutation)> = OnceLock::new();
    *PAIR.get_or_init(|| {
        let a = sigma();
        Permutation::all(5)
            .into_iter()
            .filter(|b| b.is_full_cycle())
            .find_map(|b| {
                let c = a.after(&b).after(&a.inverse()).after(&b.inverse());
                c.is_full_cycle().then_some((a, b, c))
            })
            .expect("S5 is non-solvable")
    })
}

/// A permutation `t` with `t ∘ from ∘ t⁻¹ = to`, for 5-cycles `from` and `to`.
fn conjugator(from: &Permutation, to: &Permutation) -> Permutation {
    let mut img = vec![0; 5];
    let (mut x, mut y) = (0, 0);
    for _ in 0..5 {
        img[x] = y;
        x = from.apply(x);
        y = to.apply(y);
    }
    Permutation::new(&img).unwrap()
}

/// Compiles a fan-in-2 circuit into a width-5 program accepting exactly on `{sigma()}`.
///
/// Each gate is compiled against a target 5-cycle `γ` so that its program evaluates to `γ`
/// when the gate is 1 and to the identity when it is 0. NOT folds the constant `γ` into the
/// last line of the child's `γ⁻¹` program; AND is the commutator of the children conjugated
/// onto the fixed commutator pair; OR goes through De Morgan.
pub fn barrington_compile(c: &Circuit) -> Pbp {
    let lines = compile_node(c, c.output(), sigma());
    Pbp::new(5, c.n().max(1), lines, vec![sigma()]).expect("compiled program is well formed")
}

fn compile_node(c: &Circuit, v: usize, target: Permutation) -> Vec<PbpInstruction> {
    let node = c.node(v);
    match node.kind {
        NodeKind::Input(var) => vec![PbpInstruction {
            var,
            f: target,
            g: Permutation::identity(5),
        }],
        NodeKind::Id => compile_node(c, node.fanin[0], target),
        NodeKind::Not => negate(target, |t| compile_node(c, node.fanin[0], t)),
        NodeKind::And => conjoin(
            target,
            |t| compile_node(c, node.fanin[0], t),
            |t| compile_node(c, node.fanin[1], t),
        ),
        NodeKind::Or => negate(target, |t| {
            conjoin(
                t,
                |t2| negate(t2, |t3| compile_node(c, node.fanin[0], t3)),
                |t2| negate(t2, |t3| compile_node(c, node.fanin[1], t3)),
            )
        }),
    }
}

fn negate(target: Permutation, child: impl Fn(Permutation) -> Vec<PbpInstruction>) -> Vec<PbpInstruction> {
    let mut lines = child(target.inverse());
    let last = lines.last_mut().expect("programs are nonempty");
    last.f = target.after(&last.f);
    last.g = target.after(&last.g);
    lines
}

fn conjoin(
    target: Permutation,
    left: impl Fn(Permutation) -> Vec<PbpInstruction>,
    right: impl Fn(Permutation) -> Vec<PbpInstruction>,
) -> Vec<PbpInstruction> {
    let (a0, b0, c0) = commutator_pair();
    let t = conjugator(&c0, &target);
    let ti = t.inverse();
    let a = t.after(&a0).after(&ti);
    let b = t.after(&b0).after(&ti);
    let p1 = left(a);
    let p2 = right(b);
    // Evaluates to p1 ∘ p2 ∘ p1⁻¹ ∘ p2⁻¹.
    let mut lines = inverse_program(&p2);
    lines.extend(inverse_program(&p1));
    lines.extend(p2);
    lines.extend(p1);
    lines
}

impl fmt::Display for Pbp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |p: &Permutation| {
            p.images()
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(f, "pbp w={} n={} t={}", self.w, self.n, self.lines.len())?;
        for (p, line) in self.lines.iter().enumerate() {
            writeln!(f, "line {p} {} {} {}", line.var, join(&line.f), join(&line.g))?;
        }
        write!(f, "accept {}", self.accept.len())?;
        for p in &self.accept {
            write!(f, " {}", join(p))?;
        }
        writeln!(f)
    }
}

impl FromStr for Pbp {
    type Err = Error;

    fn from_str(text: &str) -> Result<Pbp> {
        let mut lines_iter = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let syntax = |line: usize, msg: &str| Error::Syntax {
            line,
            msg: msg.to_string(),
        };
        let (hline, header) = lines_iter.next().ok_or_else(|| syntax(1, "empty program"))?;
        let mut hw = header.split_whitespace();
        if hw.next() != Some("pbp") {
            return Err(syntax(hline, "expected `pbp` header"));
        }
        let mut field = |name: &str| -> Result<usize> {
            hw.next()
                .and_then(|s| s.strip_prefix(name))
                .and_then(|s| s.strip_prefix('='))
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| syntax(hline, &format!("expected `{name}=<int>`")))
        };
        let (w, n, t) = (field("w")?, field("n")?, field("t")?);
        let perm = |line: usize, words: &[&str]| -> Result<Permutation> {
            let images = words
                .iter()
                .map(|s| s.parse::<usize>().map_err(|_| syntax(line, "bad image")))
                .collect::<Result<Vec<_>>>()?;
            Permutation::new(&images)
        };
        let mut lines = Vec::with_capacity(t);
        let mut accept = None;
        for (ln, l) in lines_iter {
            let words: Vec<&str> = l.split_whitespace().collect();
            match words[0] {
                "line" => {
                    if words.len() != 3 + 2 * w {
                        return Err(syntax(ln, "line needs index, variable and two permutations"));
                    }
                    let p: usize = words[1].parse().map_err(|_| syntax(ln, "bad line index"))?;
                    if p != lines.len() {
                        return Err(syntax(ln, "line indices must be consecutive from 0"));
                    }
                    let var = words[2].parse().map_err(|_| syntax(ln, "bad variable"))?;
                    lines.push(PbpInstruction {
                        var,
                        f: perm(ln, &words[3..3 + w])?,
                        g: perm(ln, &words[3 + w..])?,
                    });
                }
                "accept" => {
                    let k: usize = words
                        .get(1)
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| syntax(ln, "bad accept count"))?;
                    if words.len() != 2 + k * w {
                        return Err(syntax(ln, "accept count does not match permutations"));
                    }
                    accept = Some(
                        words[2..]
                            .chunks(w)
                            .map(|chunk| perm(ln, chunk))
                            .collect::<Result<Vec<_>>>()?,
                    );
                }
                _ => return Err(syntax(ln, "expected `line` or `accept`")),
            }
        }
        if lines.len() != t {
            return Err(syntax(hline, "header length does not match line count"));
        }
        Pbp::new(w, n, lines, accept.ok_or_else(|| syntax(hline, "missing accept trailer"))?)
    }
}
