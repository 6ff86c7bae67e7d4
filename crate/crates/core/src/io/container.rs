//! Text header + little-endian `f32` payload, shared by the stream and
//! checkpoint formats. The header is a sequence of `key value...` lines
//! opened by `MAGIC VERSION` and closed by a line reading `end`.

use crate::error::{Error, Location, Result};

pub(crate) struct HeaderLines<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
    end_line: usize,
}

pub(crate) struct Container<'a> {
    pub header: HeaderLines<'a>,
    pub payload: Payload<'a>,
}

/// Bytes after the header; `offset` is their position in the file.
pub(crate) struct Payload<'a> {
    pub bytes: &'a [u8],
    pub offset: usize,
}

pub(crate) fn split<'a>(bytes: &'a [u8], magic: &str, version: u32) -> Result<Container<'a>> {
    let mut lines = Vec::new();
    let mut start = 0;
    let mut line_no = 0;
    loop {
        line_no += 1;
        let Some(len) = bytes[start..].iter().position(|&b| b == b'\n') else {
            return Err(Error::parse_line(
                line_no,
                "header ended before the `end` line",
            ));
        };
        let raw = &bytes[start..start + len];
        let line = std::str::from_utf8(raw)
            .map_err(|_| Error::parse_line(line_no, "header line is not valid UTF-8"))?
            .trim_end_matches('\r');
        start += len + 1;
        if line_no == 1 {
            let mut it = line.split_whitespace();
            if it.next() != Some(magic) {
                return Err(Error::Format(format!(
                    "missing `{magic}` magic, not a {magic} file"
                )));
            }
            match it.next().map(str::parse::<u32>) {
                Some(Ok(v)) if v == version => {}
                Some(Ok(v)) => {
                    return Err(Error::Format(format!(
                        "{magic} version {v} is not supported (expected {version})"
                    )))
                }
                _ => return Err(Error::parse_line(1, "missing format version")),
            }
            continue;
        }
        if line == "end" {
            return Ok(Container {
                header: HeaderLines {
                    lines,
                    pos: 0,
                    end_line: line_no,
                },
                payload: Payload {
                    bytes: &bytes[start..],
                    offset: start,
                },
            });
        }
        if !line.trim().is_empty() {
            lines.push((line_no, line));
        }
    }
}

impl<'a> HeaderLines<'a> {
    pub fn peek_key(&self) -> Option<&'a str> {
        self.lines
            .get(self.pos)
            .and_then(|(_, l)| l.split_whitespace().next())
    }

    /// Consumes the next line, which must start with `key`; returns its
    /// line number and remaining fields.
    pub fn expect(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let Some(&(no, line)) = self.lines.get(self.pos) else {
            return Err(Error::parse_line(
                self.end_line,
                format!("expected `{key}` before `end`"),
            ));
        };
        let mut fields = line.split_whitespace();
        let got = fields.next().unwrap_or("");
        if got != key {
            return Err(Error::parse_line(
                no,
                format!("expected `{key}`, found `{got}`"),
            ));
        }
        self.pos += 1;
        Ok((no, fields.collect()))
    }

    /// Like [`expect`](Self::expect) but for keys that may be absent.
    pub fn optional(&mut self, key: &str) -> Result<Option<(usize, Vec<&'a str>)>> {
        if self.peek_key() == Some(key) {
            self.expect(key).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn finish(&self) -> Result<()> {
        match self.lines.get(self.pos) {
            Some(&(no, line)) => Err(Error::parse_line(
                no,
                format!("unexpected header line `{line}`"),
            )),
            None => Ok(()),
        }
    }
}

pub(crate) fn parse_field<T: std::str::FromStr>(line: usize, what: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse_line(line, format!("invalid {what} `{s}`")))
}

pub(crate) fn exact_fields<'b>(
    line: usize,
    key: &str,
    fields: &'b [&'b str],
    n: usize,
) -> Result<&'b [&'b str]> {
    if fields.len() != n {
        return Err(Error::parse_line(
            line,
            format!("`{key}` takes {n} value(s), got {}", fields.len()),
        ));
    }
    Ok(fields)
}

/// Reads `count` little-endian `f32`s at `*cursor`, advancing it.
pub(crate) fn read_f32s(c: &Payload<'_>, cursor: &mut usize, count: usize) -> Result<Vec<f32>> {
    let need = count * 4;
    let avail = c.bytes.len() - *cursor;
    if avail < need {
        return Err(Error::parse_offset(
            c.offset + c.bytes.len(),
            format!("payload truncated: need {need} more bytes, {avail} left"),
        ));
    }
    let out = c.bytes[*cursor..*cursor + need]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    *cursor += need;
    Ok(out)
}

pub(crate) fn finish_payload(c: &Payload<'_>, cursor: usize) -> Result<()> {
    if cursor != c.bytes.len() {
        return Err(Error::Parse {
            location: Location::Offset(c.offset + cursor),
            message: format!("{} trailing bytes after payload", c.bytes.len() - cursor),
        });
    }
    Ok(())
}

pub(crate) fn write_f32s(out: &mut Vec<u8>, data: impl IntoIterator<Item = f32>) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Parent list as written in headers: `-` for the root, indices otherwise.
pub(crate) fn format_parents(parents: &[Option<usize>]) -> String {
    parents
        .iter()
        .map(|p| p.map_or_else(|| "-".to_string(), |p| p.to_string()))
        .collect::<Vec<_>>()
        .join(" ")
}

pub(crate) fn parse_parents(line: usize, fields: &[&str]) -> Result<Vec<Option<usize>>> {
    fields
        .iter()
        .map(|f| match *f {
            "-" => Ok(None),
            s => parse_field(line, "parent index", s).map(Some),
        })
        .collect()
}
