//! Tab-separated triad listings: `query_id  k  target  reference  discriminative`.

use std::io::{BufRead, Write};

use crate::triad::{DiscriminativeTriad, ParsedQuery};

#[derive(Debug, thiserror::Error)]
pub enum TriadTsvError {
    #[error("line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TriadRow {
    pub query_id: String,
    /// 1-based index within the query.
    pub k: usize,
    pub triad: DiscriminativeTriad,
}

pub fn write_triads<W: Write>(mut writer: W, queries: &[ParsedQuery]) -> std::io::Result<()> {
    for q in queries {
        for (k, t) in q.triads.iter().enumerate() {
            writeln!(
                writer,
                "{}\t{}\t{}\t{}\t{}",
                q.query_id,
                k + 1,
                t.target,
                t.reference,
                t.discriminative
            )?;
        }
    }
    Ok(())
}

pub fn read_triads<R: BufRead>(reader: R) -> Result<Vec<TriadRow>, TriadTsvError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |detail: String| TriadTsvError::Malformed { line: i + 1, detail };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(fail(format!("expected 5 columns, found {}", cols.len())));
        }
        let k = cols[1]
            .parse::<usize>()
            .ok()
            .filter(|&k| k >= 1)
            .ok_or_else(|| fail(format!("bad triad index '{}'", cols[1])))?;
        let triad = DiscriminativeTriad::new(cols[2], cols[3], cols[4]).map_err(|e| fail(e.to_string()))?;
        out.push(TriadRow {
            query_id: cols[0].to_string(),
            k,
            triad,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_rows() {
        assert!(read_triads("q1\t1\tcat\tcat\n".as_bytes()).is_err());
        assert!(read_triads("q1\t0\tcat\tcat\tred\n".as_bytes()).is_err());
        assert!(read_triads("q1\t1\tcat\tdog\tSELF\n".as_bytes()).is_err());
        let rows = read_triads("q1\t1\tcat\tcat\tred\n\n".as_bytes()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].triad.discriminative, "red");
    }
}
