//! IEEE 1149.1 test access port giving serial access to the register file.
//!
//! Instructions (4-bit IR):
//! - `0x1` REG_ACCESS: 12-bit DR `{addr[3:0], data[7:0]}`; Update-DR writes
//!   `data` to `addr` and selects `addr`.
//! - `0x2` REG_READ: same DR framing; Update-DR only selects `addr`.
//! - `0xE` IDCODE: 32-bit DR, captures [`IDCODE`].
//! - `0xF` BYPASS (and any unknown opcode): 1-bit DR.
//!
//! Under REG_ACCESS and REG_READ, Capture-DR loads `{sel, reg[sel]}` for the
//! currently selected address, so a read is one REG_READ scan to select
//! followed by a second scan that shifts the value out. All shifts are
//! LSB-first.

use super::registers::RegisterFile;

pub const IDCODE: u32 = 0x22FD_5C01;
pub const IR_LEN: usize = 4;
pub const REG_DR_LEN: usize = 12;
pub const IDCODE_DR_LEN: usize = 32;

/// Value loaded into the IR shift register at Capture-IR.
const IR_CAPTURE: u8 = 0b0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Instruction {
    RegAccess = 0x1,
    RegRead = 0x2,
    Idcode = 0xE,
    Bypass = 0xF,
}

impl Instruction {
    pub fn from_bits(v: u8) -> Self {
        match v & 0xF {
            0x1 => Self::RegAccess,
            0x2 => Self::RegRead,
            0xE => Self::Idcode,
            _ => Self::Bypass,
        }
    }

    pub fn dr_len(self) -> usize {
        match self {
            Self::RegAccess | Self::RegRead => REG_DR_LEN,
            Self::Idcode => IDCODE_DR_LEN,
            Self::Bypass => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TapState {
    TestLogicReset,
    RunTestIdle,
    SelectDrScan,
    CaptureDr,
    ShiftDr,
    Exit1Dr,
    PauseDr,
    Exit2Dr,
    UpdateDr,
    SelectIrScan,
    CaptureIr,
    ShiftIr,
    Exit1Ir,
    PauseIr,
    Exit2Ir,
    UpdateIr,
}

impl TapState {
    pub const ALL: [TapState; 16] = [
        TapState::TestLogicReset,
        TapState::RunTestIdle,
        TapState::SelectDrScan,
        TapState::CaptureDr,
        TapState::ShiftDr,
        TapState::Exit1Dr,
        TapState::PauseDr,
        TapState::Exit2Dr,
        TapState::UpdateDr,
        TapState::SelectIrScan,
        TapState::CaptureIr,
        TapState::ShiftIr,
        TapState::Exit1Ir,
        TapState::PauseIr,
        TapState::Exit2Ir,
        TapState::UpdateIr,
    ];

    pub fn next(self, tms: bool) -> TapState {
        use TapState::*;
        match (self, tms) {
            (TestLogicReset, true) => TestLogicReset,
            (TestLogicReset, false) => RunTestIdle,
            (RunTestIdle, true) => SelectDrScan,
            (RunTestIdle, false) => RunTestIdle,
            (SelectDrScan, true) => SelectIrScan,
            (SelectDrScan, false) => CaptureDr,
            (CaptureDr, true) => Exit1Dr,
            (CaptureDr, false) => ShiftDr,
            (ShiftDr, true) => Exit1Dr,
            (ShiftDr, false) => ShiftDr,
            (Exit1Dr, true) => UpdateDr,
            (Exit1Dr, false) => PauseDr,
            (PauseDr, true) => Exit2Dr,
            (PauseDr, false) => PauseDr,
            (Exit2Dr, true) => UpdateDr,
            (Exit2Dr, false) => ShiftDr,
            (UpdateDr, true) => SelectDrScan,
            (UpdateDr, false) => RunTestIdle,
            (SelectIrScan, true) => TestLogicReset,
            (SelectIrScan, false) => CaptureIr,
            (CaptureIr, true) => Exit1Ir,
            (CaptureIr, false) => ShiftIr,
            (ShiftIr, true) => Exit1Ir,
            (ShiftIr, false) => ShiftIr,
            (Exit1Ir, true) => UpdateIr,
            (Exit1Ir, false) => PauseIr,
            (PauseIr, true) => Exit2Ir,
            (PauseIr, false) => PauseIr,
            (Exit2Ir, true) => UpdateIr,
            (Exit2Ir, false) => ShiftIr,
            (UpdateIr, true) => SelectDrScan,
            (UpdateIr, false) => RunTestIdle,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TapController {
    state: TapState,
    ir: Instruction,
    ir_shift: u8,
    dr_shift: u64,
    dr_len: usize,
    selected: u8,
}

impl Default for TapController {
    fn default() -> Self {
        Self {
            state: TapState::TestLogicReset,
            ir: Instruction::Idcode,
            ir_shift: 0,
            dr_shift: 0,
            dr_len: IDCODE_DR_LEN,
            selected: 0,
        }
    }
}

impl TapController {
    pub fn state(&self) -> TapState {
        self.state
    }

    pub fn instruction(&self) -> Instruction {
        self.ir
    }

    /// One TCK cycle. Returns TDO, which is valid only in Shift-IR/Shift-DR.
    pub fn clock(&mut self, regs: &mut RegisterFile, tms: bool, tdi: bool) -> bool {
        let tdo = match self.state {
            TapState::ShiftIr => {
                let out = self.ir_shift & 1 != 0;
                self.ir_shift = (self.ir_shift >> 1) | ((tdi as u8) << (IR_LEN - 1));
                out
            }
            TapState::ShiftDr => {
                let out = self.dr_shift & 1 != 0;
                self.dr_shift = (self.dr_shift >> 1) | ((tdi as u64) << (self.dr_len - 1));
                out
            }
            _ => false,
        };

        self.state = self.state.next(tms);
        match self.state {
            TapState::TestLogicReset => {
                self.ir = Instruction::Idcode;
                self.dr_len = IDCODE_DR_LEN;
            }
            TapState::CaptureIr => self.ir_shift = IR_CAPTURE,
            TapState::UpdateIr => {
                self.ir = Instruction::from_bits(self.ir_shift);
                self.dr_len = self.ir.dr_len();
            }
            TapState::CaptureDr => {
                self.dr_shift = match self.ir {
                    Instruction::RegAccess | Instruction::RegRead => {
                        ((self.selected as u64) << 8) | regs.read(self.selected) as u64
                    }
                    Instruction::Idcode => IDCODE as u64,
                    Instruction::Bypass => 0,
                };
            }
            TapState::UpdateDr => {
                let addr = ((self.dr_shift >> 8) & 0xF) as u8;
                let data = (self.dr_shift & 0xFF) as u8;
                match self.ir {
                    Instruction::RegAccess => {
                        regs.write(addr, data);
                        self.selected = addr;
                    }
                    Instruction::RegRead => self.selected = addr,
                    _ => {}
                }
            }
            _ => {}
        }
        tdo
    }
}
