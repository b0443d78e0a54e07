use std::fmt;

pub const USAGE: u8 = 2;
pub const DATA: u8 = 3;
pub const MODEL: u8 = 4;

/// An error that decides the process exit code.
#[derive(Debug)]
pub struct Exit {
    pub code: u8,
    pub error: anyhow::Error,
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl std::error::Error for Exit {}

pub trait WithCode<T> {
    fn code(self, code: u8) -> anyhow::Result<T>;
}

impl<T, E: Into<anyhow::Error>> WithCode<T> for Result<T, E> {
    fn code(self, code: u8) -> anyhow::Result<T> {
        self.map_err(|e| Exit { code, error: e.into() }.into())
    }
}

pub fn fail(code: u8, message: impl fmt::Display) -> anyhow::Error {
    Exit { code, error: anyhow::anyhow!("{message}") }.into()
}
