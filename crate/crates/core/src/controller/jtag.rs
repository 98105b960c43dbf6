//! Register access over the TAP, driven bit-by-bit through a [`Backend`].

use super::{Backend, Controller, ControllerError};
use crate::chip::tap::{Instruction, IDCODE_DR_LEN, IR_LEN, REG_DR_LEN};

impl<B: Backend> Controller<B> {
    /// Five TMS=1 clocks, then park in Run-Test/Idle.
    pub fn tap_reset(&mut self) {
        for _ in 0..5 {
            self.backend.tap_clock(true, false);
        }
        self.backend.tap_clock(false, false);
        self.loaded_ir = Some(Instruction::Idcode);
    }

    fn ensure_idle(&mut self) {
        if self.loaded_ir.is_none() {
            self.tap_reset();
        }
    }

    fn shift_ir(&mut self, ir: Instruction) {
        self.ensure_idle();
        if self.loaded_ir == Some(ir) {
            return;
        }
        for tms in [true, true, false, false] {
            self.backend.tap_clock(tms, false);
        }
        let bits = ir as u8;
        for k in 0..IR_LEN {
            self.backend
                .tap_clock(k == IR_LEN - 1, (bits >> k) & 1 != 0);
        }
        self.backend.tap_clock(true, false);
        self.backend.tap_clock(false, false);
        self.loaded_ir = Some(ir);
    }

    /// Idle -> Shift-DR, shift `len` bits LSB-first, Update-DR -> Idle.
    fn shift_dr(&mut self, value: u64, len: usize) -> u64 {
        self.ensure_idle();
        for tms in [true, false, false] {
            self.backend.tap_clock(tms, false);
        }
        let mut out = 0u64;
        for k in 0..len {
            let tdo = self.backend.tap_clock(k == len - 1, (value >> k) & 1 != 0);
            out |= (tdo as u64) << k;
        }
        self.backend.tap_clock(true, false);
        self.backend.tap_clock(false, false);
        out
    }

    pub fn read_idcode(&mut self) -> u32 {
        self.shift_ir(Instruction::Idcode);
        self.shift_dr(0, IDCODE_DR_LEN) as u32
    }

    pub fn write_register(&mut self, addr: u8, data: u8) {
        self.shift_ir(Instruction::RegAccess);
        let frame = (((addr & 0xF) as u64) << 8) | data as u64;
        self.shift_dr(frame, REG_DR_LEN);
    }

    pub fn read_register(&mut self, addr: u8) -> Result<u8, ControllerError> {
        self.shift_ir(Instruction::RegRead);
        let frame = ((addr & 0xF) as u64) << 8;
        self.shift_dr(frame, REG_DR_LEN);
        let out = self.shift_dr(frame, REG_DR_LEN);
        let echoed = ((out >> 8) & 0xF) as u8;
        if echoed != addr & 0xF {
            return Err(ControllerError::TapProtocol(format!(
                "read of 0x{addr:X} echoed address 0x{echoed:X}"
            )));
        }
        Ok((out & 0xFF) as u8)
    }
}
