//! Whitespace-separated ASCII headers shared by PFM and PPM.

use std::path::Path;
use std::str::FromStr;

use crate::error::Error;

pub(super) struct HeaderReader<'a> {
    bytes: &'a [u8],
    path: &'a Path,
    pos: usize,
    token_start: usize,
}

impl<'a> HeaderReader<'a> {
    pub fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        HeaderReader {
            bytes,
            path,
            pos: 0,
            token_start: 0,
        }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn error(&self, reason: String) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.token_start,
            reason,
        }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    pub fn token(&mut self) -> Result<String, Error> {
        self.skip_space_and_comments();
        self.token_start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        if self.pos == self.token_start {
            return Err(self.error("unexpected end of header".into()));
        }
        Ok(String::from_utf8_lossy(&self.bytes[self.token_start..self.pos]).into_owned())
    }

    pub fn number<T: FromStr>(&mut self) -> Result<T, Error> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| self.error(format!("expected a number, found {tok:?}")))
    }

    /// Consumes the single whitespace byte that terminates the header and
    /// returns the payload offset.
    pub fn end_of_header(&mut self) -> Result<usize, Error> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(Error::Format {
                path: self.path.to_path_buf(),
                offset: self.pos,
                reason: "header not terminated by whitespace".into(),
            }),
        }
    }
}
