//! Aligned text tables, CSV and JSON reports.

use std::io::Write;
use std::path::Path;

use clap::ValueEnum;

use crate::failure::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Report,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, headers: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<I, S>(&mut self, row: I)
    where
        I: IntoIterator<Item = S>,
        S: ToString,
    {
        let row: Vec<String> = row.into_iter().map(|c| c.to_string()).collect();
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    /// Key/value row helper for two-column tables.
    pub fn kv(&mut self, key: &str, value: impl ToString) {
        self.push([key.to_string(), value.to_string()]);
    }

    pub fn render_text(&self) -> String {
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        let mut out = format!("# {}\n", self.name);
        out.push_str(&line(&self.headers));
        out.push('\n');
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        out.push_str(&rule.join("  "));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }

    pub fn render_csv(&self) -> Result<String, Failure> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)
            .map_err(|e| Failure::output(e.to_string()))?;
        for row in &self.rows {
            w.write_record(row).map_err(|e| Failure::output(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Failure::output(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Failure::output(e.to_string()))
    }
}

/// Everything one subcommand produces.
#[derive(Debug, Clone)]
pub struct Document {
    /// File stem under `--out`.
    pub stem: String,
    pub tables: Vec<Table>,
    pub report: serde_json::Value,
}

impl Document {
    fn files(&self, format: Format) -> Result<Vec<(String, String)>, Failure> {
        Ok(match format {
            Format::Table => {
                let text: Vec<String> = self.tables.iter().map(Table::render_text).collect();
                vec![(format!("{}.txt", self.stem), text.join("\n"))]
            }
            Format::Csv => self
                .tables
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let name = if i == 0 {
                        format!("{}.csv", self.stem)
                    } else {
                        format!("{}-{}.csv", self.stem, t.name)
                    };
                    t.render_csv().map(|c| (name, c))
                })
                .collect::<Result<_, _>>()?,
            Format::Report => {
                let mut text =
                    serde_json::to_string_pretty(&self.report).map_err(|e| Failure::output(e.to_string()))?;
                text.push('\n');
                vec![(format!("{}.json", self.stem), text)]
            }
        })
    }

    /// Writes the requested formats under `out`, or to stdout when `out` is `None`.
    pub fn emit(&self, formats: &[Format], out: Option<&Path>) -> Result<(), Failure> {
        let mut formats = formats.to_vec();
        formats.sort();
        formats.dedup();
        let stdout = std::io::stdout();
        let mut stdout = stdout.lock();
        if let Some(dir) = out {
            std::fs::create_dir_all(dir).map_err(|e| Failure::output(format!("{}: {e}", dir.display())))?;
        }
        let mut first = true;
        for f in formats {
            for (name, content) in self.files(f)? {
                match out {
                    Some(dir) => {
                        let path = dir.join(&name);
                        std::fs::write(&path, &content)
                            .map_err(|e| Failure::output(format!("{}: {e}", path.display())))?;
                        writeln!(stdout, "wrote {}", path.display()).map_err(|e| Failure::output(e.to_string()))?;
                    }
                    None => {
                        if !first {
                            writeln!(stdout).map_err(|e| Failure::output(e.to_string()))?;
                        }
                        write!(stdout, "{content}").map_err(|e| Failure::output(e.to_string()))?;
                    }
                }
                first = false;
            }
        }
        Ok(())
    }
}
