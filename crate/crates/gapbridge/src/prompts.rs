//! Lexicon and caption-pair files for the prompt builder.

use std::fs;
use std::io::Write;
use std::path::Path;

use gapbridge_core::prompt::{stage2_prompt_or_padding, NounLexicon, PromptRecord};
use gapbridge_core::Rng;

use crate::error::{Error, Result};

pub fn read_lexicon(path: &Path) -> Result<NounLexicon> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    NounLexicon::parse(&text).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Tab-separated `rough<TAB>gt` rows. A first row reading exactly
/// `rough<TAB>gt` is treated as a header.
pub fn read_caption_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .quoting(false)
        .flexible(true)
        .from_path(path)
        .map_err(csv_err)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != 2 {
            return Err(Error::manifest(
                path,
                format!(
                    "line {}: expected 2 tab-separated columns, found {}",
                    i + 1,
                    rec.len()
                ),
            ));
        }
        if i == 0 && &rec[0] == "rough" && &rec[1] == "gt" {
            continue;
        }
        out.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}

/// One draw per pair from a single seeded stream, in file order.
pub fn build_records(
    pairs: &[(String, String)],
    lexicon: &NounLexicon,
    p: f64,
    seed: u64,
) -> Result<Vec<PromptRecord>> {
    let mut rng = Rng::seed_from_u64(seed);
    pairs
        .iter()
        .map(|(rough, gt)| Ok(stage2_prompt_or_padding(rough, gt, lexicon, p, &mut rng)?))
        .collect()
}

/// Escapes `\` and newlines so each serialized prompt occupies one line.
pub fn escape_line(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_line(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

pub fn write_prompts(records: &[PromptRecord], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        writeln!(buf, "{}", escape_line(r.serialized.as_str())).expect("write to Vec");
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}
