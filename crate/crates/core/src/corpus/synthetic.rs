//! Seeded generator for a synthetic labeled corpus.
//!
//! Used as a stand-in when the real labeled dataset is not available. Every
//! generated contract is a small but syntactically plausible Solidity unit
//! containing one vulnerable function of its class, a handful of benign
//! functions, comments, and occasionally a harmless use of a construct that
//! is typical of another class. Filenames carry a `synthetic_` prefix so
//! generated rows can never be mistaken for real ones.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClassCounts, Contract, Corpus};
use crate::label::VulnerabilityLabel;

/// Class sizes of the reference labeled dataset (DD, IO, RE, TD).
pub const REFERENCE_COUNTS: ClassCounts = ClassCounts([97, 590, 1218, 312]);

const CONTRACT_NAMES: &[&str] = &[
    "Wallet", "Token", "Bank", "Lottery", "Crowdsale", "Vault", "Escrow", "Auction", "Exchange", "Proxy",
    "Registry", "Game", "Fund", "Airdrop", "Staking", "Treasury",
];
const VARS: &[&str] = &[
    "balance", "amount", "value", "total", "reward", "deposit", "price", "fee", "stake", "count", "limit",
    "supply",
];
const MAPS: &[&str] = &["balances", "deposits", "credits", "shares", "allowed", "rewards"];
const ADDRS: &[&str] = &["owner", "target", "beneficiary", "admin", "receiver", "implementation"];
const PRAGMAS: &[&str] = &["^0.4.24", "^0.4.19", "^0.5.0", "0.4.25", "^0.4.11"];

struct Names {
    contract: String,
    var: &'static str,
    var2: &'static str,
    map: &'static str,
    addr: &'static str,
}

fn pick<'a, R: Rng>(rng: &mut R, items: &'a [&'a str]) -> &'a str {
    items.choose(rng).expect("non-empty pool")
}

fn vulnerable_function<R: Rng>(label: VulnerabilityLabel, n: &Names, rng: &mut R) -> String {
    let Names { var, map, addr, .. } = n;
    match label {
        VulnerabilityLabel::RE => match rng.gen_range(0..3) {
            0 => format!(
                "function withdraw(uint _{var}) public {{\n    require({map}[msg.sender] >= _{var});\n    \
                 if (msg.sender.call.value(_{var})()) {{\n        {map}[msg.sender] -= _{var};\n    }}\n}}"
            ),
            1 => format!(
                "function withdrawAll() public {{\n    uint {var} = {map}[msg.sender];\n    \
                 require(msg.sender.call.value({var})());\n    {map}[msg.sender] = 0;\n}}"
            ),
            _ => format!(
                "function collect(uint _am) public payable {{\n    var acc = {map}[msg.sender];\n    \
                 if (acc >= _am) {{\n        if (msg.sender.call.value(_am)()) {{\n            acc -= _am;\n            \
                 {map}[msg.sender] = acc;\n        }}\n    }}\n}}"
            ),
        },
        VulnerabilityLabel::IO => match rng.gen_range(0..3) {
            0 => format!(
                "function transfer(address _to, uint256 _{var}) public returns (bool) {{\n    \
                 {map}[msg.sender] -= _{var};\n    {map}[_to] += _{var};\n    return true;\n}}"
            ),
            1 => format!(
                "function batchTransfer(address[] _receivers, uint256 _{var}) public returns (bool) {{\n    \
                 uint cnt = _receivers.length;\n    uint256 amount = uint256(cnt) * _{var};\n    \
                 require({map}[msg.sender] >= amount);\n    {map}[msg.sender] = {map}[msg.sender] - amount;\n    \
                 for (uint i = 0; i < cnt; i++) {{\n        {map}[_receivers[i]] = {map}[_receivers[i]] + _{var};\n    }}\n    \
                 return true;\n}}"
            ),
            _ => format!(
                "function increase(uint8 _{var}) public {{\n    uint8 current = uint8({map}[msg.sender]);\n    \
                 current = current + _{var};\n    {map}[msg.sender] = current;\n}}"
            ),
        },
        VulnerabilityLabel::TD => match rng.gen_range(0..3) {
            0 => format!(
                "function play() public payable {{\n    require(msg.value >= 1 ether);\n    \
                 if (block.timestamp % 15 == 0) {{\n        msg.sender.transfer(this.balance);\n    }}\n}}"
            ),
            1 => format!(
                "function release() public {{\n    require(now >= lockTime);\n    \
                 {addr}.transfer({map}[{addr}]);\n    {map}[{addr}] = 0;\n}}"
            ),
            _ => format!(
                "function draw() public {{\n    uint random = uint(keccak256(block.timestamp, block.difficulty)) % 100;\n    \
                 if (random < 50) {{\n        winner = msg.sender;\n    }}\n    lastDraw = now;\n}}"
            ),
        },
        VulnerabilityLabel::DD => match rng.gen_range(0..3) {
            0 => format!(
                "function forward(bytes _data) public {{\n    require({addr}.delegatecall(_data));\n}}"
            ),
            1 => "function () public payable {\n    address impl = implementation;\n    \
                  require(impl.delegatecall(msg.data));\n}"
                .to_string(),
            _ => format!(
                "function execute(address _{addr}, bytes4 _sig) public {{\n    \
                 _{addr}.delegatecall(_sig, msg.sender);\n}}"
            ),
        },
    }
}

fn benign_function<R: Rng>(n: &Names, rng: &mut R) -> String {
    let Names { var, var2, map, addr, .. } = n;
    match rng.gen_range(0..8) {
        0 => format!("function get{}() public view returns (uint) {{\n    return {var};\n}}", capitalize(var)),
        1 => format!(
            "function set{}(uint _{var2}) public {{\n    require(msg.sender == {addr});\n    {var2} = _{var2};\n}}",
            capitalize(var2)
        ),
        2 => format!("function deposit() public payable {{\n    {map}[msg.sender] += msg.value;\n}}"),
        3 => format!(
            "function change{}(address _new) public {{\n    require(msg.sender == {addr});\n    {addr} = _new;\n}}",
            capitalize(addr)
        ),
        4 => format!("function balanceOf(address _who) public view returns (uint256) {{\n    return {map}[_who];\n}}"),
        5 => "function kill() public {\n    require(msg.sender == owner);\n    selfdestruct(owner);\n}".to_string(),
        6 => format!("function stamp() public {{\n    emit Updated(msg.sender, block.timestamp);\n}}"),
        _ => format!(
            "function refund(uint _{var}) public {{\n    require({map}[msg.sender] >= _{var});\n    \
             {map}[msg.sender] -= _{var};\n    msg.sender.transfer(_{var});\n}}"
        ),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
        None => String::new(),
    }
}

fn generate_contract<R: Rng>(label: VulnerabilityLabel, rng: &mut R) -> String {
    let names = Names {
        contract: format!("{}{}", pick(rng, CONTRACT_NAMES), rng.gen_range(1..100)),
        var: pick(rng, VARS),
        var2: pick(rng, VARS),
        map: pick(rng, MAPS),
        addr: pick(rng, ADDRS),
    };
    let mut functions: Vec<String> = (0..rng.gen_range(1..5)).map(|_| benign_function(&names, rng)).collect();
    let pos = rng.gen_range(0..=functions.len());
    functions.insert(pos, vulnerable_function(label, &names, rng));

    let mut out = String::new();
    out.push_str(&format!("pragma solidity {};\n\n", pick(rng, PRAGMAS)));
    if rng.gen_bool(0.5) {
        out.push_str(&format!("/**\n * @title {}\n * @dev generated fixture\n */\n", names.contract));
    }
    out.push_str(&format!("contract {} {{\n", names.contract));
    out.push_str(&format!("    address public {} = msg.sender;\n", names.addr));
    out.push_str(&format!("    mapping(address => uint256) public {};\n", names.map));
    out.push_str(&format!("    uint256 public {} = {};\n", names.var, rng.gen_range(0..10_000)));
    if names.var2 != names.var {
        out.push_str(&format!("    uint256 public {};\n", names.var2));
    }
    match label {
        VulnerabilityLabel::TD => out.push_str("    uint public lockTime = now + 1 weeks;\n    address public winner;\n    uint public lastDraw;\n"),
        VulnerabilityLabel::DD => out.push_str("    address public implementation;\n"),
        _ => {}
    }
    out.push_str("    event Updated(address indexed who, uint when);\n\n");
    for f in functions {
        if rng.gen_bool(0.3) {
            out.push_str("    // only the owner is expected to call this\n");
        }
        for line in f.lines() {
            out.push_str("    ");
            out.push_str(line);
            out.push('\n');
        }
        out.push('\n');
    }
    out.push_str("}\n");
    out
}

/// Generate a corpus with exactly `counts` contracts per class, in a seeded
/// shuffled order.
pub fn generate(counts: ClassCounts, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<VulnerabilityLabel> =
        counts.iter().flat_map(|(label, n)| std::iter::repeat(label).take(n)).collect();
    labels.shuffle(&mut rng);
    let contracts = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| Contract::new(format!("synthetic_{i:05}.sol"), generate_contract(label, &mut rng), label))
        .collect();
    Corpus::new(contracts)
}

/// Synthetic stand-in with the reference dataset's class sizes.
pub fn reference_sized(seed: u64) -> Corpus {
    generate(REFERENCE_COUNTS, seed)
}
