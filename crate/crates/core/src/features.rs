//! The 56 AutoPhase static features.
//!
//! Feature keys and their order come from `data/autophase_features.json`,
//! which is what prompts, knowledge-base files and dataset records use.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::LazyLock;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::ir::{IrBasicBlock, IrModule, Opcode, Operand};

pub const NUM_FEATURES: usize = 56;

#[derive(Debug, Deserialize)]
struct FeatureTable {
    version: u32,
    features: Vec<FeatureSpec>,
}

/// One row of the shipped feature table.
#[derive(Debug, Clone, Deserialize)]
pub struct FeatureSpec {
    pub index: usize,
    pub key: String,
    pub description: String,
}

static TABLE: LazyLock<FeatureTable> = LazyLock::new(|| {
    let table: FeatureTable =
        serde_json::from_str(include_str!("../data/autophase_features.json"))
            .expect("shipped feature table is valid JSON");
    assert_eq!(table.features.len(), NUM_FEATURES);
    for (i, f) in table.features.iter().enumerate() {
        assert_eq!(f.index, i, "feature table out of order at {i}");
    }
    table
});

pub fn feature_table_version() -> u32 {
    TABLE.version
}

pub fn feature_specs() -> &'static [FeatureSpec] {
    &TABLE.features
}

pub fn feature_key(index: usize) -> &'static str {
    &TABLE.features[index].key
}

pub fn feature_index(key: &str) -> Option<usize> {
    TABLE.features.iter().position(|f| f.key == key)
}

// Indices into the vector, named by what they count.
pub mod idx {
    pub const BB_NUM_ARGS_HI: usize = 0;
    pub const BB_NUM_ARGS_LO: usize = 1;
    pub const ONE_PRED: usize = 2;
    pub const ONE_PRED_ONE_SUC: usize = 3;
    pub const ONE_PRED_TWO_SUC: usize = 4;
    pub const ONE_SUCCESSOR: usize = 5;
    pub const TWO_PRED: usize = 6;
    pub const TWO_PRED_ONE_SUC: usize = 7;
    pub const TWO_EACH: usize = 8;
    pub const TWO_SUCCESSOR: usize = 9;
    pub const MORE_PREDS: usize = 10;
    pub const BB_03_PHI: usize = 11;
    pub const BB_HI_PHI: usize = 12;
    pub const BB_NO_PHI: usize = 13;
    pub const BEGIN_PHI: usize = 14;
    pub const BRANCH_COUNT: usize = 15;
    pub const RETURN_INT: usize = 16;
    pub const CRITICAL_COUNT: usize = 17;
    pub const NUM_EDGES: usize = 18;
    pub const CONST_32_BIT: usize = 19;
    pub const CONST_64_BIT: usize = 20;
    pub const CONST_ZEROES: usize = 21;
    pub const CONST_ONES: usize = 22;
    pub const UNCOND_BRANCHES: usize = 23;
    pub const BINARY_CONST_ARG: usize = 24;
    pub const ASHR: usize = 25;
    pub const ADD: usize = 26;
    pub const ALLOCA: usize = 27;
    pub const AND: usize = 28;
    pub const BLOCK_MID: usize = 29;
    pub const BLOCK_LOW: usize = 30;
    pub const BITCAST: usize = 31;
    pub const BR: usize = 32;
    pub const CALL: usize = 33;
    pub const GEP: usize = 34;
    pub const ICMP: usize = 35;
    pub const LSHR: usize = 36;
    pub const LOAD: usize = 37;
    pub const MUL: usize = 38;
    pub const OR: usize = 39;
    pub const PHI: usize = 40;
    pub const RET: usize = 41;
    pub const SEXT: usize = 42;
    pub const SELECT: usize = 43;
    pub const SHL: usize = 44;
    pub const STORE: usize = 45;
    pub const SUB: usize = 46;
    pub const TRUNC: usize = 47;
    pub const XOR: usize = 48;
    pub const ZEXT: usize = 49;
    pub const TOTAL_BLOCKS: usize = 50;
    pub const TOTAL_INSTS: usize = 51;
    pub const TOTAL_MEM_INST: usize = 52;
    pub const TOTAL_FUNCS: usize = 53;
    pub const ARGS_PHI: usize = 54;
    pub const TEST_UNARY: usize = 55;

    /// Per-opcode counters: disjoint subsets of the instruction total.
    pub const OPCODE_COUNTERS: [usize; 23] = [
        ASHR, ADD, ALLOCA, AND, BITCAST, BR, CALL, GEP, ICMP, LSHR, LOAD, MUL, OR, PHI, RET, SEXT,
        SELECT, SHL, STORE, SUB, TRUNC, XOR, ZEXT,
    ];
}

/// The 56 feature counts of one module, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureVector([u64; NUM_FEATURES]);

impl Default for FeatureVector {
    fn default() -> Self {
        FeatureVector([0; NUM_FEATURES])
    }
}

impl FeatureVector {
    pub fn from_array(values: [u64; NUM_FEATURES]) -> Self {
        FeatureVector(values)
    }

    pub fn values(&self) -> &[u64; NUM_FEATURES] {
        &self.0
    }

    pub fn get(&self, index: usize) -> u64 {
        self.0[index]
    }

    pub fn by_key(&self, key: &str) -> Option<u64> {
        feature_index(key).map(|i| self.0[i])
    }

    pub fn set(&mut self, index: usize, value: u64) {
        self.0[index] = value;
    }

    pub fn total_insts(&self) -> u64 {
        self.0[idx::TOTAL_INSTS]
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, u64)> + '_ {
        self.0.iter().enumerate().map(|(i, &v)| (feature_key(i), v))
    }

    /// Flat JSON object keyed by feature name, in table order.
    pub fn to_json(&self) -> String {
        let body: Vec<String> = self.iter().map(|(k, v)| format!("\"{k}\": {v}")).collect();
        format!("{{{}}}", body.join(", "))
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

impl Serialize for FeatureVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(NUM_FEATURES))?;
        for (k, v) in self.iter() {
            map.serialize_entry(k, &v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for FeatureVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct FvVisitor;
        impl<'de> Visitor<'de> for FvVisitor {
            type Value = FeatureVector;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "a map of {NUM_FEATURES} feature counts")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut fv = FeatureVector::default();
                let mut seen = BTreeSet::new();
                while let Some((key, value)) = map.next_entry::<String, u64>()? {
                    let i = feature_index(&key)
                        .ok_or_else(|| de::Error::custom(format!("unknown feature key '{key}'")))?;
                    if !seen.insert(i) {
                        return Err(de::Error::custom(format!("duplicate feature key '{key}'")));
                    }
                    fv.0[i] = value;
                }
                if seen.len() != NUM_FEATURES {
                    let missing = (0..NUM_FEATURES).find(|i| !seen.contains(i)).unwrap();
                    return Err(de::Error::custom(format!(
                        "missing feature key '{}'",
                        feature_key(missing)
                    )));
                }
                Ok(fv)
            }
        }
        deserializer.deserialize_map(FvVisitor)
    }
}

/// Computes the 56 AutoPhase counters over every function body in `module`.
pub fn extract_features(module: &IrModule) -> FeatureVector {
    let mut v = [0u64; NUM_FEATURES];
    for f in &module.functions {
        if f.is_external {
            continue;
        }
        v[idx::TOTAL_FUNCS] += 1;
        for bb in &f.blocks {
            count_block(bb, &f.blocks, &mut v);
        }
    }
    FeatureVector(v)
}

fn count_block(bb: &IrBasicBlock, blocks: &[IrBasicBlock], v: &mut [u64; NUM_FEATURES]) {
    let preds = bb.predecessors.len();
    let succs = bb.successors.len();
    v[idx::TOTAL_BLOCKS] += 1;
    v[idx::NUM_EDGES] += succs as u64;

    let mut bump = |i: usize, cond: bool| {
        if cond {
            v[i] += 1;
        }
    };
    bump(idx::ONE_PRED, preds == 1);
    bump(idx::ONE_PRED_ONE_SUC, preds == 1 && succs == 1);
    bump(idx::ONE_PRED_TWO_SUC, preds == 1 && succs == 2);
    bump(idx::ONE_SUCCESSOR, succs == 1);
    bump(idx::TWO_PRED, preds == 2);
    bump(idx::TWO_PRED_ONE_SUC, preds == 2 && succs == 1);
    bump(idx::TWO_EACH, preds == 2 && succs == 2);
    bump(idx::TWO_SUCCESSOR, succs == 2);
    bump(idx::MORE_PREDS, preds > 2);

    let n = bb.instructions.len();
    bump(idx::BLOCK_LOW, n < 15);
    bump(idx::BLOCK_MID, (15..=500).contains(&n));

    // Critical edge: multi-successor source into a multi-predecessor target.
    if succs > 1 {
        for s in &bb.successors {
            if let Some(target) = blocks.iter().find(|b| &b.label == s) {
                if target.predecessors.len() > 1 {
                    v[idx::CRITICAL_COUNT] += 1;
                }
            }
        }
    }

    let mut phis = 0u64;
    let mut phi_args = 0u64;
    let mut leading_phis = 0u64;
    let mut in_prefix = true;
    for inst in &bb.instructions {
        v[idx::TOTAL_INSTS] += 1;
        if inst.opcode == Opcode::Phi {
            phis += 1;
            phi_args += inst.operands.len() as u64;
            if in_prefix {
                leading_phis += 1;
            }
        } else {
            in_prefix = false;
        }
        if let Some(i) = opcode_counter(&inst.opcode) {
            v[i] += 1;
        }
        if inst.opcode.is_memory() {
            v[idx::TOTAL_MEM_INST] += 1;
        }
        if inst.opcode.is_unary_instruction() {
            v[idx::TEST_UNARY] += 1;
        }
        if inst.opcode == Opcode::Br {
            v[idx::BRANCH_COUNT] += 1;
            if inst.operands.len() == 1 {
                v[idx::UNCOND_BRANCHES] += 1;
            }
        }
        if inst.opcode == Opcode::Call && inst.returns_int {
            v[idx::RETURN_INT] += 1;
        }
        if inst.opcode.is_binary_operator()
            && inst.operands.iter().any(Operand::is_scalar_constant)
        {
            v[idx::BINARY_CONST_ARG] += 1;
        }
        for op in &inst.operands {
            if let Operand::IntConst { bits, value } = op {
                match bits {
                    32 => v[idx::CONST_32_BIT] += 1,
                    64 => v[idx::CONST_64_BIT] += 1,
                    _ => {}
                }
                match value {
                    Some(0) => v[idx::CONST_ZEROES] += 1,
                    Some(1) => v[idx::CONST_ONES] += 1,
                    _ => {}
                }
            }
        }
    }

    v[idx::ARGS_PHI] += phi_args;
    v[idx::BEGIN_PHI] += leading_phis;
    bump_phi_buckets(v, phis, phi_args);
}

fn bump_phi_buckets(v: &mut [u64; NUM_FEATURES], phis: u64, phi_args: u64) {
    if phi_args > 5 {
        v[idx::BB_NUM_ARGS_HI] += 1;
    } else if phi_args >= 1 {
        v[idx::BB_NUM_ARGS_LO] += 1;
    }
    match phis {
        0 => v[idx::BB_NO_PHI] += 1,
        1..=3 => v[idx::BB_03_PHI] += 1,
        _ => v[idx::BB_HI_PHI] += 1,
    }
}

fn opcode_counter(op: &Opcode) -> Option<usize> {
    Some(match op {
        Opcode::AShr => idx::ASHR,
        Opcode::Add => idx::ADD,
        Opcode::Alloca => idx::ALLOCA,
        Opcode::And => idx::AND,
        Opcode::BitCast => idx::BITCAST,
        Opcode::Br => idx::BR,
        Opcode::Call => idx::CALL,
        Opcode::GetElementPtr => idx::GEP,
        Opcode::ICmp => idx::ICMP,
        Opcode::LShr => idx::LSHR,
        Opcode::Load => idx::LOAD,
        Opcode::Mul => idx::MUL,
        Opcode::Or => idx::OR,
        Opcode::Phi => idx::PHI,
        Opcode::Ret => idx::RET,
        Opcode::SExt => idx::SEXT,
        Opcode::Select => idx::SELECT,
        Opcode::Shl => idx::SHL,
        Opcode::Store => idx::STORE,
        Opcode::Sub => idx::SUB,
        Opcode::Trunc => idx::TRUNC,
        Opcode::Xor => idx::XOR,
        Opcode::ZExt => idx::ZEXT,
        Opcode::Other(_) => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_ir;

    fn features(ir: &str) -> FeatureVector {
        extract_features(&parse_ir(ir).unwrap())
    }

    #[test]
    fn table_keys_match_named_indices() {
        assert_eq!(feature_key(idx::NUM_EDGES), "NumEdges");
        assert_eq!(feature_key(idx::CONST_ZEROES), "numConstZeroes");
        assert_eq!(feature_key(idx::UNCOND_BRANCHES), "UncondBranches");
        assert_eq!(feature_key(idx::ASHR), "NumAShrInst");
        assert_eq!(feature_key(idx::TOTAL_INSTS), "TotalInsts");
        assert_eq!(feature_key(idx::TEST_UNARY), "testUnary");
        assert_eq!(feature_table_version(), 1);
    }

    #[test]
    fn empty_module_is_all_zero() {
        assert!(features("").is_zero());
    }

    #[test]
    fn single_return_hand_count() {
        let fv = features("define i32 @f() {\nentry:\n  ret i32 0\n}");
        let mut expected = [0u64; NUM_FEATURES];
        for i in [
            idx::BB_NO_PHI,
            idx::CONST_32_BIT,
            idx::CONST_ZEROES,
            idx::BLOCK_LOW,
            idx::RET,
            idx::TOTAL_BLOCKS,
            idx::TOTAL_INSTS,
            idx::TOTAL_FUNCS,
        ] {
            expected[i] = 1;
        }
        assert_eq!(fv, FeatureVector::from_array(expected));
    }

    #[test]
    fn unconditional_branch_pair() {
        let fv = features("define void @f() {\na:\n  br label %b\nb:\n  ret void\n}");
        assert_eq!(fv.get(idx::UNCOND_BRANCHES), 1);
        assert_eq!(fv.get(idx::NUM_EDGES), 1);
        assert_eq!(fv.get(idx::BRANCH_COUNT), 1);
        assert_eq!(fv.get(idx::BR), 1);
        assert_eq!(fv.get(idx::CRITICAL_COUNT), 0);
    }

    #[test]
    fn serialized_keys() {
        let mut fv = FeatureVector::default();
        assert!(fv.to_json().contains("\"NumAShrInst\": 0"));
        fv.set(idx::NUM_EDGES, 63);
        let text = fv.to_json();
        assert!(text.contains("\"NumEdges\": 63"));
        assert!(text.starts_with("{\"BBNumArgsHi\": 0, "));
        assert_eq!(FeatureVector::from_json(&text).unwrap(), fv);
        assert_eq!(serde_json::to_string(&fv).unwrap().replace(':', ": ").replace(',', ", "), text);
    }

    #[test]
    fn deserialize_rejects_missing_and_unknown_keys() {
        assert!(FeatureVector::from_json("{\"NumEdges\": 1}").is_err());
        let text = FeatureVector::default().to_json().replace("NumEdges", "Edges");
        assert!(FeatureVector::from_json(&text).is_err());
    }
}
