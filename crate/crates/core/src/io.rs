//! Plain-text instance files.
//!
//! ```text
//! lattice 1 0 3
//! measure sigma
//! 0.125 0.125 0.25 0.0 0.125 0.125 0.125 0.125
//! end
//! shift t0 0 1 0
//! block 0:0
//! entry 0:0 1 1:1 1 0.5
//! end
//! square b
//! coef 1:0 2.0
//! end
//! ```
//!
//! Leaf data is listed in row-major order (last axis fastest). Cubes are
//! written `level:c0,c1,...` with integer coordinates at that level. Floats
//! are printed with Rust's shortest round-trip formatting, so writing and
//! re-reading an instance is bit-exact.

use std::fmt::Write as _;

use crate::error::{DyadError, Result};
use crate::lattice::{CubeId, DyadicLattice};
use crate::measure::{Measure, StepFunction};
use crate::shift::{coefficient_bound, ShiftBlock, ShiftEntry, ShiftSpec, SquareFunctionSpec, COEFFICIENT_SLACK};

/// A named collection of objects on one lattice. Order is preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub lattice: DyadicLattice,
    pub measures: Vec<(String, Measure)>,
    pub functions: Vec<(String, StepFunction)>,
    pub shifts: Vec<(String, ShiftSpec)>,
    pub squares: Vec<(String, SquareFunctionSpec)>,
}

/// Coefficients and optional localization cube of a `square` record.
type SquareBody = (Vec<(CubeId, f64)>, Option<CubeId>);

fn find<'a, T>(items: &'a [(String, T)], name: &str) -> Option<&'a T> {
    items.iter().find(|(n, _)| n == name).map(|(_, v)| v)
}

impl Instance {
    pub fn new(lattice: DyadicLattice) -> Self {
        Self { lattice, measures: Vec::new(), functions: Vec::new(), shifts: Vec::new(), squares: Vec::new() }
    }

    pub fn measure(&self, name: &str) -> Option<&Measure> {
        find(&self.measures, name)
    }

    pub fn function(&self, name: &str) -> Option<&StepFunction> {
        find(&self.functions, name)
    }

    pub fn shift(&self, name: &str) -> Option<&ShiftSpec> {
        find(&self.shifts, name)
    }

    pub fn square(&self, name: &str) -> Option<&SquareFunctionSpec> {
        find(&self.squares, name)
    }

    pub fn shift_family(&self) -> Vec<ShiftSpec> {
        self.shifts.iter().map(|(_, s)| s.clone()).collect()
    }

    pub fn to_text(&self) -> String {
        let lat = &self.lattice;
        let mut out = String::new();
        let _ = writeln!(out, "lattice {} {} {}", lat.dim(), lat.top(), lat.leaf());
        for (name, m) in &self.measures {
            let _ = writeln!(out, "measure {name}");
            write_leaf_values(&mut out, lat, m.leaf_masses());
            out.push_str("end\n");
        }
        for (name, f) in &self.functions {
            let _ = writeln!(out, "function {name}");
            write_leaf_values(&mut out, lat, f.values());
            out.push_str("end\n");
        }
        for (name, s) in &self.shifts {
            let _ = writeln!(out, "shift {name} {} {} {}", s.m(), s.n(), u8::from(s.is_specific_form()));
            for b in s.blocks() {
                let _ = writeln!(out, "block {}", cube_text(lat, b.k));
                for e in &b.entries {
                    let _ = writeln!(
                        out,
                        "entry {} {} {} {} {:?}",
                        cube_text(lat, e.i),
                        e.eta_i,
                        cube_text(lat, e.j),
                        e.eta_j,
                        e.a
                    );
                }
            }
            out.push_str("end\n");
        }
        for (name, b) in &self.squares {
            let _ = writeln!(out, "square {name}");
            if let Some(q) = b.localization() {
                let _ = writeln!(out, "localize {}", cube_text(lat, q));
            }
            for (q, v) in b.coefficients() {
                let _ = writeln!(out, "coef {} {v:?}", cube_text(lat, *q));
            }
            out.push_str("end\n");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        Parser::new(text).run()
    }
}

/// Rows of `side_cells` values each, row-major.
fn write_leaf_values(out: &mut String, lat: &DyadicLattice, morton: &[f64]) {
    let row = lat.side_cells();
    for r in 0..lat.leaf_count() {
        let v = morton[lat.row_major_to_morton(r)];
        let _ = write!(out, "{v:?}");
        out.push(if (r + 1) % row == 0 { '\n' } else { ' ' });
    }
}

pub fn cube_text(lat: &DyadicLattice, q: CubeId) -> String {
    let coords: Vec<String> = lat.coords(q).iter().map(u64::to_string).collect();
    format!("{}:{}", q.level, coords.join(","))
}

pub fn parse_cube(lat: &DyadicLattice, s: &str) -> std::result::Result<CubeId, String> {
    let (level, coords) = s.split_once(':').ok_or_else(|| format!("cube `{s}` is not `level:coords`"))?;
    let level: i32 = level.parse().map_err(|_| format!("bad cube level `{level}`"))?;
    let coords: Vec<u64> = coords
        .split(',')
        .map(|c| c.parse::<u64>().map_err(|_| format!("bad cube coordinate `{c}`")))
        .collect::<std::result::Result<_, _>>()?;
    lat.cube(level, &coords).map_err(|e| e.to_string())
}

struct Parser<'a> {
    lines: Vec<(usize, Vec<&'a str>)>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").split_whitespace().collect::<Vec<_>>()))
            .filter(|(_, t)| !t.is_empty())
            .collect();
        Self { lines, pos: 0 }
    }

    fn err(line: usize, msg: impl Into<String>) -> DyadError {
        DyadError::Parse { line, msg: msg.into() }
    }

    fn next(&mut self) -> Option<(usize, Vec<&'a str>)> {
        let l = self.lines.get(self.pos).cloned();
        self.pos += 1;
        l
    }

    fn last_line(&self) -> usize {
        self.lines.last().map_or(1, |l| l.0)
    }

    fn run(mut self) -> Result<Instance> {
        let (line, toks) = self.next().ok_or_else(|| Self::err(1, "empty instance"))?;
        if toks[0] != "lattice" || toks.len() != 4 {
            return Err(Self::err(line, "expected `lattice <dim> <top> <leaf>`"));
        }
        let nums: Vec<u32> = toks[1..]
            .iter()
            .map(|t| t.parse().map_err(|_| Self::err(line, format!("bad lattice field `{t}`"))))
            .collect::<Result<_>>()?;
        let lat = DyadicLattice::new(nums[0], nums[1], nums[2]).map_err(|e| Self::err(line, e.to_string()))?;
        let mut inst = Instance::new(lat);
        let mut names = std::collections::BTreeSet::new();
        while let Some((line, toks)) = self.next() {
            if toks.len() < 2 {
                return Err(Self::err(line, format!("`{}` needs a name", toks[0])));
            }
            let name = toks[1].to_string();
            if !names.insert(name.clone()) {
                return Err(Self::err(line, format!("duplicate name `{name}`")));
            }
            match toks[0] {
                "measure" => {
                    let v = self.leaf_values(&lat, line)?;
                    let m = Measure::from_leaf_masses(lat, v).map_err(|e| Self::err(line, e.to_string()))?;
                    inst.measures.push((name, m));
                }
                "function" => {
                    let v = self.leaf_values(&lat, line)?;
                    let f = StepFunction::from_values(lat, v).map_err(|e| Self::err(line, e.to_string()))?;
                    inst.functions.push((name, f));
                }
                "shift" => {
                    if toks.len() != 5 {
                        return Err(Self::err(line, "expected `shift <name> <m> <n> <specific 0|1>`"));
                    }
                    let m = parse_num::<u32>(line, toks[2], "m")?;
                    let n = parse_num::<u32>(line, toks[3], "n")?;
                    let specific = match toks[4] {
                        "0" => false,
                        "1" => true,
                        t => return Err(Self::err(line, format!("specific flag must be 0 or 1, got `{t}`"))),
                    };
                    let blocks = self.shift_blocks(&lat)?;
                    let s = ShiftSpec::new(lat, m, n, blocks, specific).map_err(|e| Self::err(line, e.to_string()))?;
                    inst.shifts.push((name, s));
                }
                "square" => {
                    let (coefs, loc) = self.square_body(&lat)?;
                    let mut b = SquareFunctionSpec::new(lat, coefs).map_err(|e| Self::err(line, e.to_string()))?;
                    if let Some(q) = loc {
                        b = b.localized(q).map_err(|e| Self::err(line, e.to_string()))?;
                    }
                    inst.squares.push((name, b));
                }
                other => return Err(Self::err(line, format!("unknown record `{other}`"))),
            }
        }
        Ok(inst)
    }

    fn leaf_values(&mut self, lat: &DyadicLattice, start: usize) -> Result<Vec<f64>> {
        let mut rows = Vec::with_capacity(lat.leaf_count());
        loop {
            let (line, toks) = self.next().ok_or_else(|| Self::err(self.last_line(), "missing `end`"))?;
            if toks == ["end"] {
                break;
            }
            for t in toks {
                rows.push(parse_num::<f64>(line, t, "value")?);
            }
        }
        if rows.len() != lat.leaf_count() {
            return Err(Self::err(start, format!("expected {} values, found {}", lat.leaf_count(), rows.len())));
        }
        let mut morton = vec![0.0; rows.len()];
        for (r, v) in rows.into_iter().enumerate() {
            morton[lat.row_major_to_morton(r)] = v;
        }
        Ok(morton)
    }

    fn shift_blocks(&mut self, lat: &DyadicLattice) -> Result<Vec<ShiftBlock>> {
        let mut blocks: Vec<ShiftBlock> = Vec::new();
        loop {
            let (line, toks) = self.next().ok_or_else(|| Self::err(self.last_line(), "missing `end`"))?;
            match toks[0] {
                "end" => return Ok(blocks),
                "block" if toks.len() == 2 => {
                    let k = parse_cube(lat, toks[1]).map_err(|e| Self::err(line, e))?;
                    blocks.push(ShiftBlock { k, entries: Vec::new() });
                }
                "entry" if toks.len() == 6 => {
                    let block = blocks.last_mut().ok_or_else(|| Self::err(line, "`entry` before any `block`"))?;
                    let i = parse_cube(lat, toks[1]).map_err(|e| Self::err(line, e))?;
                    let eta_i = parse_num::<u32>(line, toks[2], "eta_i")?;
                    let j = parse_cube(lat, toks[3]).map_err(|e| Self::err(line, e))?;
                    let eta_j = parse_num::<u32>(line, toks[4], "eta_j")?;
                    let a = parse_num::<f64>(line, toks[5], "coefficient")?;
                    // checked again by ShiftSpec::new; here for the line number
                    if lat.contains(block.k, i) && lat.contains(block.k, j) {
                        let bound = coefficient_bound(lat, i, j, block.k);
                        if a.abs() > bound * (1.0 + COEFFICIENT_SLACK) {
                            return Err(Self::err(line, format!("coefficient {a} exceeds sqrt(|I||J|)/|K| = {bound}")));
                        }
                    }
                    block.entries.push(ShiftEntry { i, j, a, eta_i, eta_j });
                }
                _ => return Err(Self::err(line, "expected `block <cube>`, `entry <I> <eta> <J> <eta> <a>` or `end`")),
            }
        }
    }

    fn square_body(&mut self, lat: &DyadicLattice) -> Result<SquareBody> {
        let mut coefs = Vec::new();
        let mut loc = None;
        loop {
            let (line, toks) = self.next().ok_or_else(|| Self::err(self.last_line(), "missing `end`"))?;
            match (toks[0], toks.len()) {
                ("end", 1) => return Ok((coefs, loc)),
                ("coef", 3) => {
                    let q = parse_cube(lat, toks[1]).map_err(|e| Self::err(line, e))?;
                    coefs.push((q, parse_num::<f64>(line, toks[2], "coefficient")?));
                }
                ("localize", 2) => loc = Some(parse_cube(lat, toks[1]).map_err(|e| Self::err(line, e))?),
                _ => return Err(Self::err(line, "expected `coef <cube> <b>`, `localize <cube>` or `end`")),
            }
        }
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, tok: &str, field: &str) -> Result<T> {
    tok.parse().map_err(|_| DyadError::Parse { line, msg: format!("bad {field} `{tok}`") })
}
