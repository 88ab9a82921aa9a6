//! Plain-text result tables.

use serde::{Deserialize, Serialize};

use crate::fusion::{AblationRow, HitsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Align {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Row {
    Cells(Vec<String>),
    /// Horizontal rule across every column.
    Rule,
    /// Rule starting at the given column.
    RuleFrom(usize),
}

/// Pipe-separated table with a rule under the header.
#[derive(Debug, Clone, PartialEq)]
pub struct TextTable {
    pub header: Vec<Vec<String>>,
    pub align: Vec<Align>,
    pub rows: Vec<Row>,
}

impl TextTable {
    pub fn render(&self) -> String {
        let cols = self.align.len();
        let mut width = vec![0usize; cols];
        let cells = self.header.iter().chain(self.rows.iter().filter_map(|r| match r {
            Row::Cells(c) => Some(c),
            _ => None,
        }));
        for row in cells {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }

        let cell_line = |row: &[String]| {
            let parts: Vec<String> = (0..cols)
                .map(|i| {
                    let c = row.get(i).map(String::as_str).unwrap_or("");
                    match self.align[i] {
                        Align::Left => format!("{c:<w$}", w = width[i]),
                        Align::Right => format!("{c:>w$}", w = width[i]),
                    }
                })
                .collect();
            parts.join(" | ").trim_end().to_string()
        };
        let rule_line = |from: usize| {
            let mut s = String::new();
            for (i, &w) in width.iter().enumerate() {
                if i > 0 {
                    s.push_str(match i.cmp(&from) {
                        std::cmp::Ordering::Less => "   ",
                        std::cmp::Ordering::Equal => " +-",
                        std::cmp::Ordering::Greater => "-+-",
                    });
                }
                let fill = if i < from { ' ' } else { '-' };
                s.extend(std::iter::repeat_n(fill, w));
            }
            s
        };

        let mut out = String::new();
        for h in &self.header {
            out.push_str(&cell_line(h));
            out.push('\n');
        }
        out.push_str(&rule_line(0));
        out.push('\n');
        for r in &self.rows {
            match r {
                Row::Cells(c) => out.push_str(&cell_line(c)),
                Row::Rule => out.push_str(&rule_line(0)),
                Row::RuleFrom(i) => out.push_str(&rule_line(*i)),
            }
            out.push('\n');
        }
        out
    }
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}")).unwrap_or_else(|| "-".into())
}

fn hits_cells(h: &HitsReport, ns: &[usize]) -> Vec<String> {
    ns.iter().map(|&n| pct(h.at(n))).collect()
}

fn row(prefix: &[&str], h: &HitsReport, ns: &[usize]) -> Row {
    let mut c: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    c.extend(hits_cells(h, ns));
    Row::Cells(c)
}

/// Retrieval baselines, single matchers and the fused model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainTable {
    pub text: HitsReport,
    pub image: HitsReport,
    pub tbm: HitsReport,
    pub tcm: HitsReport,
    pub ibm: HitsReport,
    pub clip: HitsReport,
    pub full: HitsReport,
}

impl MainTable {
    fn lines(&self) -> [(&'static str, &'static str, &HitsReport); 7] {
        [
            ("Retrieval", "Text", &self.text),
            ("", "Image", &self.image),
            ("Ranking", "TBM", &self.tbm),
            ("", "TCM", &self.tcm),
            ("", "IBM", &self.ibm),
            ("", "CLIP", &self.clip),
            ("", "Full Model", &self.full),
        ]
    }
}

fn main_rows(parts: &[&MainTable], ns: &[usize]) -> Vec<Row> {
    let mut rows = Vec::new();
    for i in 0..7 {
        match i {
            2 => rows.push(Row::Rule),
            6 => rows.push(Row::RuleFrom(1)),
            _ => {}
        }
        let (stage, model, _) = parts[0].lines()[i];
        let mut c = vec![stage.to_string(), model.to_string()];
        for p in parts {
            c.extend(hits_cells(p.lines()[i].2, ns));
        }
        rows.push(Row::Cells(c));
    }
    rows
}

/// Stage / model / Hits@{1,3,10} on one split.
pub fn format_main_table(t: &MainTable) -> String {
    let ns = [1, 3, 10];
    let mut header = vec!["Stage".to_string(), "Model".to_string()];
    header.extend(ns.iter().map(|n| format!("Hits@{n}")));
    TextTable {
        header: vec![header],
        align: [vec![Align::Left; 2], vec![Align::Right; 3]].concat(),
        rows: main_rows(&[t], &ns),
    }
    .render()
}

/// Dev and test side by side with Hits@100.
pub fn format_dev_test_table(dev: &MainTable, test: &MainTable) -> String {
    let ns = [1, 3, 10, 100];
    let mut groups = vec![String::new(), String::new(), "Dev".to_string()];
    groups.extend(vec![String::new(); 3]);
    groups.push("Test".into());
    let mut header = vec!["Stage".to_string(), "Model".to_string()];
    for _ in 0..2 {
        header.extend(ns.iter().map(|n| format!("Hits@{n}")));
    }
    let mut align = vec![Align::Left; 2];
    align.extend(vec![Align::Right; 8]);
    TextTable {
        header: vec![groups, header],
        align,
        rows: main_rows(&[dev, test], &ns),
    }
    .render()
}

/// Full model followed by the leave-one-out rows.
pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let ns = [1, 3, 10];
    let mut out = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        if i == 1 || i == 3 {
            out.push(Row::Rule);
        }
        out.push(row(&[&r.label], &r.test, &ns));
    }
    TextTable {
        header: vec![vec!["Model".into(), "Hits@1".into(), "Hits@3".into(), "Hits@10".into()]],
        align: vec![Align::Left, Align::Right, Align::Right, Align::Right],
        rows: out,
    }
    .render()
}

/// Each matcher and the full model, plain and assembled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembleTable {
    pub plain: [HitsReport; 5],
    pub assembled: [HitsReport; 5],
}

pub fn format_assemble_table(t: &AssembleTable) -> String {
    let ns = [1, 3, 10];
    let names = ["TBM", "TCM", "IBM", "CLIP", "Full Model"];
    let mut rows = Vec::new();
    for (i, name) in names.iter().enumerate() {
        if i == 4 {
            rows.push(Row::Rule);
        }
        rows.push(row(&[name], &t.plain[i], &ns));
        rows.push(row(&["  w/ assemble"], &t.assembled[i], &ns));
    }
    TextTable {
        header: vec![vec!["Model".into(), "Hits@1".into(), "Hits@3".into(), "Hits@10".into()]],
        align: vec![Align::Left, Align::Right, Align::Right, Align::Right],
        rows,
    }
    .render()
}
