// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! `QBC2` multi-core program files.
//!
//! All integers little-endian:
//!
//! ```text
//! "QBC2"  version:u16  core_count:u16
//! repeat core_count times:
//!     core_id:u16  instruction_count:u32  instruction_count x 16-byte words
//! ```

use super::{decode_instruction, encode_instruction, Instruction, IsaError};

pub const PROGRAM_MAGIC: &[u8; 4] = b"QBC2";
pub const PROGRAM_VERSION: u16 = 1;

/// One core's instruction stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoreImage {
    pub core_id: u16,
    pub instructions: Vec<Instruction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProgramFile {
    pub cores: Vec<CoreImage>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], IsaError> {
        if self.bytes.len() - self.pos < n {
            return Err(IsaError::Format(format!(
                "truncated file: expected {n} bytes of {what} at offset {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16, IsaError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, IsaError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

impl ProgramFile {
    pub fn core(&self, core_id: u16) -> Option<&CoreImage> {
        self.cores.iter().find(|c| c.core_id == core_id)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, IsaError> {
        let mut out = Vec::new();
        out.extend_from_slice(PROGRAM_MAGIC);
        out.extend_from_slice(&PROGRAM_VERSION.to_le_bytes());
        let count = u16::try_from(self.cores.len())
            .map_err(|_| IsaError::Format("too many cores".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for core in &self.cores {
            out.extend_from_slice(&core.core_id.to_le_bytes());
            let n = u32::try_from(core.instructions.len())
                .map_err(|_| IsaError::Format("too many instructions".into()))?;
            out.extend_from_slice(&n.to_le_bytes());
            for instr in &core.instructions {
                out.extend_from_slice(&encode_instruction(instr)?.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IsaError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != PROGRAM_MAGIC {
            return Err(IsaError::Format(format!(
                "bad magic {:?}, expected \"QBC2\"",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u16("version")?;
        if version != PROGRAM_VERSION {
            return Err(IsaError::Format(format!("unsupported version {version}")));
        }
        let count = r.u16("core count")?;
        let mut cores = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let core_id = r.u16("core id")?;
            let n = r.u32("instruction count")? as usize;
            let mut instructions = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                let word = u128::from_le_bytes(r.take(16, "instruction")?.try_into().unwrap());
                instructions.push(decode_instruction(word)?);
            }
            cores.push(CoreImage {
                core_id,
                instructions,
            });
        }
        if r.pos != bytes.len() {
            return Err(IsaError::Format(format!(
                "{} trailing bytes after last core",
                bytes.len() - r.pos
            )));
        }
        Ok(ProgramFile { cores })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::PulseCommand;

    fn sample() -> ProgramFile {
        ProgramFile {
            cores: vec![
                CoreImage {
                    core_id: 0,
                    instructions: vec![
                        Instruction::Sync {
                            barrier_id: 0,
                            core_mask: 0b11,
                        },
                        Instruction::Pulse {
                            time: 16,
                            dest_channel: 2,
                            cmd: PulseCommand {
                                freq_word: 1 << 20,
                                phase_word: 5,
                                amp_word: 400,
                                length: 256,
                                env_addr: 0,
                            },
                        },
                        Instruction::Halt,
                    ],
                },
                CoreImage {
                    core_id: 1,
                    instructions: vec![Instruction::Halt],
                },
            ],
        }
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[0..4], b"QBC2");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 2);
        assert_eq!(bytes.len(), 8 + (2 + 4 + 3 * 16) + (2 + 4 + 16));
        // Halt word of core 1 is the last 16 bytes; opcode lives in the top byte.
        assert_eq!(*bytes.last().unwrap(), 0x08);
    }

    #[test]
    fn roundtrip() {
        let p = sample();
        assert_eq!(ProgramFile::from_bytes(&p.to_bytes().unwrap()).unwrap(), p);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[3] = b'3';
        let err = ProgramFile::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn truncated() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [2, 7, 12, bytes.len() - 1] {
            assert!(matches!(
                ProgramFile::from_bytes(&bytes[..cut]),
                Err(IsaError::Format(_))
            ));
        }
    }
}
