//! Seeded generator of labeled C snippets for desk-scale experiments.
//!
//! Each CWE maps to a few template families. A family is one function shape;
//! the defective variant plants the weakness and the clean variant carries
//! the guard or fix. Identifier names, literals and filler statements are
//! drawn from the seed so that the two variants differ only in the defect.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Origin, WarningRecord};
use crate::error::{Error, Result};
use crate::Rng;

/// CWE ids with a template, and the checker name reported for each.
pub const TEMPLATES: [(&str, &str); 5] = [
    ("CWE-252", "CHECKED_RETURN"),
    ("CWE-401", "RESOURCE_LEAK"),
    ("CWE-404", "RESOURCE_LEAK"),
    ("CWE-457", "UNINIT"),
    ("CWE-476", "NULL_RETURNS"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SynthCounts {
    pub positives: usize,
    pub negatives: usize,
    #[serde(default)]
    pub open: usize,
}

/// Requested record counts per CWE.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SynthSpec {
    pub cwes: BTreeMap<String, SynthCounts>,
}

impl SynthSpec {
    pub fn with(mut self, cwe: &str, positives: usize, negatives: usize, open: usize) -> Self {
        self.cwes.insert(
            cwe.to_string(),
            SynthCounts {
                positives,
                negatives,
                open,
            },
        );
        self
    }

    /// Parses `CWE-476:100:100[:20],CWE-457:...` (positives, negatives, open).
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SynthSpec::default();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let fields: Vec<&str> = part.split(':').collect();
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad count {s:?} in {part:?}")))
            };
            let (pos, neg, open) = match fields.as_slice() {
                [_, p, n] => (num(p)?, num(n)?, 0),
                [_, p, n, o] => (num(p)?, num(n)?, num(o)?),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "expected CWE:pos:neg[:open], got {part:?}"
                    )))
                }
            };
            spec = spec.with(fields[0], pos, neg, open);
        }
        Ok(spec)
    }
}

const VARS: [&str; 20] = [
    "count", "len", "size", "idx", "total", "flags", "offset", "limit", "value", "state", "mode",
    "result", "key", "width", "height", "depth", "level", "retry", "port", "slot",
];
const PTRS: [&str; 10] = ["buf", "data", "node", "entry", "item", "ctx", "msg", "pkt", "rec", "hdr"];
const STRUCTS: [&str; 5] = ["node", "entry", "packet", "session", "buffer"];
const FIELDS: [&str; 6] = ["val", "len", "next", "flags", "id", "count"];
const WORDS: [&str; 6] = ["init", "retry", "drop", "flush", "reset", "poll"];
const SOURCES: [&str; 4] = ["next_id", "read_config", "get_param", "poll_counter"];
const MODULES: [&str; 6] = ["net", "core", "drivers", "mgmt", "proto", "util"];

struct Snippet {
    family: &'static str,
    lines: Vec<String>,
    /// 0-based index into `lines`.
    warn: usize,
}

struct Gen<'a> {
    rng: &'a mut Rng,
    used: Vec<&'static str>,
}

impl Gen<'_> {
    fn fresh(&mut self, pool: &[&'static str]) -> &'static str {
        let free: Vec<&'static str> = pool.iter().copied().filter(|n| !self.used.contains(n)).collect();
        let name = *free.choose(self.rng).expect("name pool exhausted");
        self.used.push(name);
        name
    }

    fn pick(&mut self, pool: &[&'static str]) -> &'static str {
        pool.choose(self.rng).unwrap()
    }

    fn lit(&mut self, lo: i64, hi: i64) -> i64 {
        self.rng.random_range(lo..=hi)
    }

    fn coin(&mut self) -> bool {
        self.rng.random_bool(0.5)
    }

    /// Zero to two filler statements over a fresh local, declared inline.
    fn filler(&mut self, lines: &mut Vec<String>, indent: usize) {
        let n = self.rng.random_range(0..=2);
        if n == 0 {
            return;
        }
        let pad = "    ".repeat(indent);
        let v = self.fresh(&VARS);
        let src = self.pick(&SOURCES);
        let k = self.lit(1, 64);
        lines.push(format!("{pad}int {v} = {src}({k});"));
        for _ in 1..n {
            let k = self.lit(1, 32);
            let stmt = match self.rng.random_range(0..5) {
                0 => format!("{pad}{v} = {v} + {k};"),
                1 => {
                    let w = self.pick(&WORDS);
                    format!("{pad}log_event(\"{w}\", {v});")
                }
                2 => format!("{pad}if ({v} > {k}) {{\n{pad}    {v} = {v} / 2;\n{pad}}}"),
                3 => format!("{pad}while ({v} < {k}) {{\n{pad}    {v}++;\n{pad}}}"),
                _ => format!("{pad}update_stats({v}, {k});"),
            };
            lines.extend(stmt.split('\n').map(str::to_string));
        }
    }
}

fn null_deref(g: &mut Gen, defect: bool) -> Snippet {
    let mut l = Vec::new();
    let warn;
    let family = match g.rng.random_range(0..3) {
        0 => {
            let n = g.fresh(&VARS);
            let p = g.fresh(&PTRS);
            let (k, k2) = (g.lit(2, 16), g.lit(0, 255));
            l.push(format!("int alloc_buffer(int {n}) {{"));
            l.push(format!("    char *{p} = malloc({n} * {k});"));
            g.filler(&mut l, 1);
            if !defect {
                if g.coin() {
                    l.push(format!("    if ({p} == NULL) {{"));
                    l.push("        return -1;".into());
                    l.push("    }".into());
                } else {
                    l.push(format!("    if (!{p}) return -1;"));
                }
            }
            warn = l.len();
            l.push(format!("    {p}[0] = {k2};"));
            g.filler(&mut l, 1);
            l.push(format!("    free({p});"));
            l.push("    return 0;".into());
            "alloc_buffer"
        }
        1 => {
            let s = g.pick(&STRUCTS);
            let v = g.fresh(&VARS);
            let p = g.fresh(&PTRS);
            let f = g.pick(&FIELDS);
            l.push(format!("struct {s} *make_node(int {v}) {{"));
            l.push(format!("    struct {s} *{p} = malloc(sizeof(struct {s}));"));
            if !defect {
                l.push(format!("    if ({p} == NULL) {{"));
                l.push("        return NULL;".into());
                l.push("    }".into());
            }
            g.filler(&mut l, 1);
            warn = l.len();
            l.push(format!("    {p}->{f} = {v};"));
            l.push(format!("    {p}->next = NULL;"));
            l.push(format!("    return {p};"));
            "make_node"
        }
        _ => {
            let s = g.pick(&STRUCTS);
            let t = g.fresh(&PTRS);
            let key = g.fresh(&VARS);
            let e = g.fresh(&PTRS);
            let f = g.pick(&FIELDS);
            l.push(format!("int lookup_entry(struct table *{t}, int {key}) {{"));
            l.push(format!("    struct {s} *{e} = find_entry({t}, {key});"));
            g.filler(&mut l, 1);
            if !defect {
                l.push(format!("    if ({e} == NULL) {{"));
                l.push("        return 0;".into());
                l.push("    }".into());
            }
            warn = l.len();
            l.push(format!("    return {e}->{f};"));
            "lookup_entry"
        }
    };
    l.push("}".into());
    Snippet { family, lines: l, warn }
}

fn uninit(g: &mut Gen, defect: bool) -> Snippet {
    let mut l = Vec::new();
    let warn;
    let family = match g.rng.random_range(0..3) {
        0 => {
            let arr = g.fresh(&PTRS);
            let n = g.fresh(&VARS);
            let i = g.fresh(&VARS);
            let acc = g.fresh(&VARS);
            l.push(format!("int compute_total(int *{arr}, int {n}) {{"));
            l.push(format!("    int {i};"));
            if defect {
                l.push(format!("    int {acc};"));
            } else {
                l.push(format!("    int {acc} = 0;"));
            }
            g.filler(&mut l, 1);
            l.push(format!("    for ({i} = 0; {i} < {n}; {i}++) {{"));
            warn = l.len();
            l.push(format!("        {acc} += {arr}[{i}];"));
            l.push("    }".into());
            l.push(format!("    return {acc};"));
            "compute_total"
        }
        1 => {
            let flag = g.fresh(&VARS);
            let a = g.fresh(&VARS);
            let b = g.fresh(&VARS);
            let r = g.fresh(&VARS);
            let k = g.lit(0, 9);
            l.push(format!("int pick_value(int {flag}, int {a}, int {b}) {{"));
            l.push(format!("    int {r};"));
            g.filler(&mut l, 1);
            l.push(format!("    if ({flag} > {k}) {{"));
            l.push(format!("        {r} = {a};"));
            if defect {
                l.push("    }".into());
            } else {
                l.push("    } else {".into());
                l.push(format!("        {r} = {b};"));
                l.push("    }".into());
            }
            warn = l.len();
            l.push(format!("    return {r};"));
            "pick_value"
        }
        _ => {
            let s = g.pick(&STRUCTS);
            let p = g.fresh(&PTRS);
            let st = g.fresh(&VARS);
            let f = g.pick(&FIELDS);
            let k = g.lit(0, 7);
            l.push(format!("int read_status(struct {s} *{p}) {{"));
            if defect {
                l.push(format!("    int {st};"));
            } else {
                l.push(format!("    int {st} = {k};"));
            }
            l.push(format!("    if ({p}->{f} != 0) {{"));
            l.push(format!("        {st} = {p}->{f};"));
            l.push("    }".into());
            g.filler(&mut l, 1);
            warn = l.len();
            l.push(format!("    return {st} + 1;"));
            "read_status"
        }
    };
    l.push("}".into());
    Snippet { family, lines: l, warn }
}

fn leak(g: &mut Gen, defect: bool) -> Snippet {
    let mut l = Vec::new();
    let warn;
    let family = match g.rng.random_range(0..3) {
        0 => {
            let src = g.fresh(&PTRS);
            let len = g.fresh(&VARS);
            let tmp = g.fresh(&PTRS);
            let k = g.lit(64, 4096);
            l.push(format!("int copy_buffer(char *{src}, int {len}) {{"));
            l.push(format!("    char *{tmp} = malloc({len});"));
            l.push(format!("    if ({tmp} == NULL) {{"));
            l.push("        return -1;".into());
            l.push("    }".into());
            g.filler(&mut l, 1);
            l.push(format!("    if ({len} > {k}) {{"));
            if !defect {
                l.push(format!("        free({tmp});"));
            }
            warn = l.len();
            l.push("        return -2;".into());
            l.push("    }".into());
            l.push(format!("    memcpy({tmp}, {src}, {len});"));
            l.push(format!("    consume({tmp});"));
            l.push(format!("    free({tmp});"));
            l.push("    return 0;".into());
            "copy_buffer"
        }
        1 => {
            let name = g.fresh(&PTRS);
            let fd = g.fresh(&VARS);
            let k = g.lit(0, 3);
            l.push(format!("int open_stream(char *{name}) {{"));
            l.push(format!("    int {fd} = open_handle({name}, {k});"));
            l.push(format!("    if ({fd} < 0) {{"));
            l.push("        return -1;".into());
            l.push("    }".into());
            g.filler(&mut l, 1);
            l.push(format!("    read_header({fd});"));
            if !defect {
                l.push(format!("    close_handle({fd});"));
            }
            warn = l.len();
            l.push("    return 0;".into());
            "open_stream"
        }
        _ => {
            let s = g.pick(&STRUCTS);
            let n = g.fresh(&VARS);
            let p = g.fresh(&PTRS);
            let f = g.pick(&FIELDS);
            l.push(format!("int build_list(int {n}) {{"));
            l.push(format!("    struct {s} *{p} = malloc(sizeof(struct {s}));"));
            l.push(format!("    if ({p} == NULL) {{"));
            l.push("        return -1;".into());
            l.push("    }".into());
            l.push(format!("    {p}->{f} = {n};"));
            g.filler(&mut l, 1);
            l.push(format!("    if (register_item({p}) != 0) {{"));
            if !defect {
                l.push(format!("        free({p});"));
            }
            warn = l.len();
            l.push("        return -1;".into());
            l.push("    }".into());
            l.push("    return 0;".into());
            "build_list"
        }
    };
    l.push("}".into());
    Snippet { family, lines: l, warn }
}

fn unchecked_return(g: &mut Gen, defect: bool) -> Snippet {
    let mut l = Vec::new();
    let warn;
    let family = if g.coin() {
        let fd = g.fresh(&VARS);
        let buf = g.fresh(&PTRS);
        let n = g.fresh(&VARS);
        let rc = g.fresh(&VARS);
        l.push(format!("int write_record(int {fd}, char *{buf}, int {n}) {{"));
        g.filler(&mut l, 1);
        warn = l.len();
        if defect {
            l.push(format!("    write_block({fd}, {buf}, {n});"));
        } else {
            l.push(format!("    int {rc} = write_block({fd}, {buf}, {n});"));
            l.push(format!("    if ({rc} < 0) {{"));
            l.push(format!("        return {rc};"));
            l.push("    }".into());
        }
        l.push("    return 0;".into());
        "write_record"
    } else {
        let s = g.pick(&STRUCTS);
        let ctx = g.fresh(&PTRS);
        let v = g.fresh(&VARS);
        let f = g.pick(&FIELDS);
        l.push(format!("int set_option(struct {s} *{ctx}, int {v}) {{"));
        warn = l.len();
        if defect {
            l.push(format!("    apply_setting({ctx}, {v});"));
        } else {
            l.push(format!("    if (apply_setting({ctx}, {v}) != 0) {{"));
            l.push("        return -1;".into());
            l.push("    }".into());
        }
        g.filler(&mut l, 1);
        l.push(format!("    {ctx}->{f} = {v};"));
        l.push("    return 0;".into());
        "set_option"
    };
    l.push("}".into());
    Snippet { family, lines: l, warn }
}

fn template_for(cwe: &str) -> Option<(fn(&mut Gen, bool) -> Snippet, &'static str)> {
    let checker = TEMPLATES.iter().find(|(c, _)| *c == cwe)?.1;
    let f: fn(&mut Gen, bool) -> Snippet = match cwe {
        "CWE-476" => null_deref,
        "CWE-457" => uninit,
        "CWE-401" | "CWE-404" => leak,
        "CWE-252" => unchecked_return,
        _ => return None,
    };
    Some((f, checker))
}

/// Generates labeled warning records for `spec`. Pure in `(spec, seed)`.
pub fn generate_synthetic_corpus(spec: &SynthSpec, seed: u64) -> Result<Vec<WarningRecord>> {
    for cwe in spec.cwes.keys() {
        if template_for(cwe).is_none() {
            return Err(Error::UnknownTemplate(cwe.clone()));
        }
    }
    let mut rng = crate::seeded_rng(seed);
    let mut out = Vec::new();
    for (cwe, counts) in &spec.cwes {
        let (make, checker) = template_for(cwe).unwrap();
        let mut plan: Vec<Option<bool>> = Vec::new();
        plan.extend(std::iter::repeat_n(Some(true), counts.positives));
        plan.extend(std::iter::repeat_n(Some(false), counts.negatives));
        plan.extend(std::iter::repeat_n(None, counts.open));
        plan.shuffle(&mut rng);
        for (i, item) in plan.into_iter().enumerate() {
            let (defect, origin) = match item {
                Some(true) => (true, Origin::ReportedFixed),
                Some(false) if rng.random_bool(0.5) => (false, Origin::Dismissed),
                Some(false) => (false, Origin::SyntheticFixed),
                None => (rng.random_bool(0.5), Origin::Open),
            };
            let mut g = Gen {
                rng: &mut rng,
                used: Vec::new(),
            };
            let snippet = make(&mut g, defect);
            let module = *MODULES.choose(&mut rng).unwrap();
            out.push(WarningRecord {
                id: format!("{cwe}-{i:05}"),
                cwe: cwe.clone(),
                source: snippet.lines.join("\n") + "\n",
                file_path: format!("src/{module}/{}.c", snippet.family),
                line: snippet.warn + 1,
                checker: checker.to_string(),
                origin,
            });
        }
    }
    Ok(out)
}

/// Writes the generated corpus as JSONL.
pub fn write_synthetic_corpus(spec: &SynthSpec, seed: u64, path: impl AsRef<Path>) -> Result<usize> {
    let records = generate_synthetic_corpus(spec, seed)?;
    let path = path.as_ref();
    fs::write(path, super::to_jsonl(&records)).map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_planted_defect() {
        let spec = SynthSpec::default().with("CWE-476", 100, 100, 0);
        let recs = generate_synthetic_corpus(&spec, 7).unwrap();
        assert_eq!(recs.len(), 200);
        let pos: Vec<_> = recs.iter().filter(|r| r.label() == Some(1)).collect();
        assert_eq!(pos.len(), 100);
        // Positives never test the allocated pointer before using it.
        for r in &pos {
            assert!(!r.source.contains("== NULL") && !r.source.contains("if (!"), "{}", r.source);
        }
        let neg_guarded = recs
            .iter()
            .filter(|r| r.label() == Some(0))
            .filter(|r| r.source.contains("== NULL") || r.source.contains("if (!"))
            .count();
        assert_eq!(neg_guarded, 100);
    }

    #[test]
    fn byte_identical_for_same_seed() {
        let spec = SynthSpec::default().with("CWE-476", 20, 20, 5).with("CWE-457", 10, 10, 0);
        let a = super::super::to_jsonl(&generate_synthetic_corpus(&spec, 3).unwrap());
        let b = super::super::to_jsonl(&generate_synthetic_corpus(&spec, 3).unwrap());
        assert_eq!(a, b);
        let c = super::super::to_jsonl(&generate_synthetic_corpus(&spec, 4).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn unknown_template() {
        let spec = SynthSpec::default().with("CWE-999", 10, 0, 0);
        let err = generate_synthetic_corpus(&spec, 1).unwrap_err();
        assert_eq!(err.to_string(), "unknown template CWE-999");
    }

    #[test]
    fn warning_line_points_into_source() {
        let spec = SynthSpec::default()
            .with("CWE-252", 10, 10, 3)
            .with("CWE-404", 10, 10, 3)
            .with("CWE-457", 10, 10, 3)
            .with("CWE-476", 10, 10, 3);
        for r in generate_synthetic_corpus(&spec, 11).unwrap() {
            assert!(r.line >= 1 && r.line <= r.source.lines().count(), "{r:?}");
        }
    }

    #[test]
    fn spec_string_parses() {
        let spec = SynthSpec::parse("CWE-476:10:12, CWE-457:1:2:3").unwrap();
        assert_eq!(spec.cwes["CWE-476"], SynthCounts { positives: 10, negatives: 12, open: 0 });
        assert_eq!(spec.cwes["CWE-457"].open, 3);
        assert!(SynthSpec::parse("CWE-476:x:1").is_err());
    }
}
