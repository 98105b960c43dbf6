//! On-chip control/status register map.
//!
//! | addr | name   | bits                                             |
//! |------|--------|--------------------------------------------------|
//! | 0x0  | CTRL   | 0 DAC_EN, 1 TIA_EN, 2 CMP_EN, 3 TEST_MODE        |
//! | 0x1  | DAC    | [5:0] code, [7:6] section                        |
//! | 0x2  | CMP    | [4:0] trim                                       |
//! | 0x3  | STATUS | 0 V_FLAG (read-only)                             |
//!
//! Reserved bits read as zero; unmapped addresses read as zero and ignore writes.

pub const ADDR_CTRL: u8 = 0x0;
pub const ADDR_DAC: u8 = 0x1;
pub const ADDR_CMP: u8 = 0x2;
pub const ADDR_STATUS: u8 = 0x3;

pub const CTRL_DAC_EN: u8 = 1 << 0;
pub const CTRL_TIA_EN: u8 = 1 << 1;
pub const CTRL_CMP_EN: u8 = 1 << 2;
pub const CTRL_TEST_MODE: u8 = 1 << 3;
pub const CTRL_ALL_ENABLES: u8 = CTRL_DAC_EN | CTRL_TIA_EN | CTRL_CMP_EN;

pub const STATUS_V_FLAG: u8 = 1 << 0;

const CTRL_MASK: u8 = 0x0F;
const DAC_MASK: u8 = 0xFF;
const CMP_MASK: u8 = 0x1F;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RegisterFile {
    ctrl: u8,
    dac: u8,
    cmp: u8,
    status: u8,
}

impl RegisterFile {
    pub fn read(&self, addr: u8) -> u8 {
        match addr {
            ADDR_CTRL => self.ctrl,
            ADDR_DAC => self.dac,
            ADDR_CMP => self.cmp,
            ADDR_STATUS => self.status,
            _ => 0,
        }
    }

    /// Bus write; STATUS and unmapped addresses are ignored.
    pub fn write(&mut self, addr: u8, data: u8) {
        match addr {
            ADDR_CTRL => self.ctrl = data & CTRL_MASK,
            ADDR_DAC => self.dac = data & DAC_MASK,
            ADDR_CMP => self.cmp = data & CMP_MASK,
            _ => {}
        }
    }

    /// Writable-bit mask of a register, zero for read-only or unmapped.
    pub fn writable_mask(addr: u8) -> u8 {
        match addr {
            ADDR_CTRL => CTRL_MASK,
            ADDR_DAC => DAC_MASK,
            ADDR_CMP => CMP_MASK,
            _ => 0,
        }
    }

    pub fn ctrl(&self) -> u8 {
        self.ctrl
    }

    pub fn dac(&self) -> u8 {
        self.dac
    }

    pub fn trim(&self) -> u8 {
        self.cmp
    }

    pub fn flag(&self) -> bool {
        self.status & STATUS_V_FLAG != 0
    }

    pub(crate) fn latch_flag(&mut self, flag: bool) {
        self.status = if flag { STATUS_V_FLAG } else { 0 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_bits_read_zero() {
        let mut r = RegisterFile::default();
        r.write(ADDR_CTRL, 0xFF);
        r.write(ADDR_CMP, 0xFF);
        assert_eq!(r.read(ADDR_CTRL), 0x0F);
        assert_eq!(r.read(ADDR_CMP), 0x1F);
    }

    #[test]
    fn status_is_read_only() {
        let mut r = RegisterFile::default();
        r.latch_flag(true);
        r.write(ADDR_STATUS, 0x00);
        assert_eq!(r.read(ADDR_STATUS), STATUS_V_FLAG);
        r.write(0x7, 0xAA);
        assert_eq!(r.read(0x7), 0);
    }
}
