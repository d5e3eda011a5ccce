//! Byte cursor for whitespace-delimited file headers, tracking offsets so
//! parse errors can point at the offending byte.

use crate::error::{Error, Result};

pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    pub fn remaining(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }

    fn skip_separators(&mut self, allow_comments: bool) {
        loop {
            while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if allow_comments && self.pos < self.buf.len() && self.buf[self.pos] == b'#' {
                while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            return;
        }
    }

    /// Next whitespace-delimited token and its start offset.
    pub fn token(&mut self, what: &str, allow_comments: bool) -> Result<(usize, &'a [u8])> {
        self.skip_separators(allow_comments);
        if self.pos >= self.buf.len() {
            return Err(Error::parse(
                self.buf.len(),
                format!("unexpected end of file, expected {what}"),
            ));
        }
        let start = self.pos;
        while self.pos < self.buf.len() && !self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Ok((start, &self.buf[start..self.pos]))
    }

    pub fn parse_usize(&mut self, what: &str, allow_comments: bool) -> Result<usize> {
        let (offset, tok) = self.token(what, allow_comments)?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::parse(offset, format!("expected positive integer {what}")))
    }

    /// Consumes the single whitespace byte separating the header from the
    /// binary payload.
    pub fn expect_payload_separator(&mut self) -> Result<()> {
        if self.pos < self.buf.len() && self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::parse(self.pos, "expected a single whitespace byte before the binary payload"))
        }
    }
}
