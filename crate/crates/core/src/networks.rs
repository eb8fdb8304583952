//! Per-user encoders, the shared decoder, and their portable weight file.
//!
//! Symbol indices are 0-based in every API of this crate. Files meant for
//! people (alphabet tables, scatter exports) number symbols from 1.
//!
//! Encoder: one-hot symbol → dense(64) → ReLU → dense(S) → `x_max · sigmoid`.
//! Decoder: `z / z_scale` → batchnorm → dense(64) → ReLU → dense(64) → ReLU
//! → dense(N), split into one softmax segment per user.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{MixtureVector, SystemConfig};
use crate::diffcore::{BatchStats, Matrix, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::rng;

/// `[user][item][symbol]` probabilities.
pub type Likelihoods = Vec<Vec<Vec<f64>>>;

pub const HIDDEN: usize = 64;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Frozen running statistics.
    Eval,
}

#[derive(Debug, Clone)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let w = store.add(
            format!("{name}.w"),
            Matrix::from_vec(fan_in, fan_out, data).expect("sized"),
        );
        let b = store.add(format!("{name}.b"), Matrix::zeros(1, fan_out));
        Self { w, b }
    }

    fn lookup(store: &ParamStore, name: &str) -> Result<Self> {
        let find = |suffix: &str| {
            store
                .find(&format!("{name}.{suffix}"))
                .ok_or_else(|| Error::Config(format!("weight file lacks parameter {name}.{suffix}")))
        };
        Ok(Self {
            w: find("w")?,
            b: find("b")?,
        })
    }

    fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.affine(x, w, Some(b))
    }
}

fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn output_bound(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}

/// Symbol → mixture network of one user.
#[derive(Debug, Clone)]
pub struct EncoderNet {
    symbols: usize,
    molecules: usize,
    x_max: f64,
    hidden: Dense,
    out: Dense,
}

impl EncoderNet {
    fn new<R: Rng>(
        store: &mut ParamStore,
        user: usize,
        symbols: usize,
        molecules: usize,
        x_max: f64,
        rng: &mut R,
    ) -> Self {
        let prefix = format!("enc{user}");
        let hidden = Dense::new(store, &format!("{prefix}.l1"), symbols, HIDDEN, he_bound(symbols), rng);
        let out = Dense::new(
            store,
            &format!("{prefix}.l2"),
            HIDDEN,
            molecules,
            output_bound(HIDDEN),
            rng,
        );
        Self {
            symbols,
            molecules,
            x_max,
            hidden,
            out,
        }
    }

    fn lookup(store: &ParamStore, user: usize, symbols: usize, molecules: usize, x_max: f64) -> Result<Self> {
        let prefix = format!("enc{user}");
        Ok(Self {
            symbols,
            molecules,
            x_max,
            hidden: Dense::lookup(store, &format!("{prefix}.l1"))?,
            out: Dense::lookup(store, &format!("{prefix}.l2"))?,
        })
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    /// Mixtures for a batch of symbols, K×S, on the tape.
    pub fn encode_tape(&self, tape: &mut Tape, store: &ParamStore, symbols: &[usize]) -> Result<Var> {
        let x = tape.constant(Matrix::one_hot(symbols, self.symbols)?);
        let h = self.hidden.apply(tape, store, x)?;
        let h = tape.relu(h);
        let o = self.out.apply(tape, store, h)?;
        Ok(tape.scaled_sigmoid(o, self.x_max))
    }

    pub fn encode(&self, store: &ParamStore, symbol: usize) -> Result<MixtureVector> {
        if symbol >= self.symbols {
            return Err(Error::Usage(format!(
                "symbol {symbol} out of range for alphabet of size {}",
                self.symbols
            )));
        }
        let mut tape = Tape::new();
        let v = self.encode_tape(&mut tape, store, &[symbol])?;
        Ok(MixtureVector(tape.value(v).row(0).to_vec()))
    }

    pub fn molecules(&self) -> usize {
        self.molecules
    }
}

/// Symbol → mixture lookup table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphabetTable {
    pub rows: Vec<MixtureVector>,
}

impl AlphabetTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn lookup(&self, symbol: usize) -> Result<&MixtureVector> {
        self.rows.get(symbol).ok_or_else(|| {
            Error::Usage(format!(
                "symbol {symbol} out of range for alphabet of size {}",
                self.rows.len()
            ))
        })
    }

    pub fn lookup_batch(&self, symbols: &[usize]) -> Result<Matrix> {
        let rows = symbols
            .iter()
            .map(|&s| self.lookup(s).map(|m| m.0.clone()))
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }

    /// CSV with header `symbol,x1,..,xS`; symbols numbered from 1. Floats are
    /// written in shortest round-trip form, so reading restores them exactly.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let s = self.rows.first().map_or(0, MixtureVector::len);
        let mut header = vec!["symbol".to_string()];
        header.extend((1..=s).map(|m| format!("x{m}")));
        w.write_record(&header)?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec = vec![(i + 1).to_string()];
            rec.extend(row.0.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let symbol: usize = rec
                .get(0)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Config(format!("{}: bad symbol in row {}", path.display(), i + 1)))?;
            if symbol != i + 1 {
                return Err(Error::Config(format!(
                    "{}: expected symbol {} in row {}, found {symbol}",
                    path.display(),
                    i + 1,
                    i + 1
                )));
            }
            let values = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::Config(format!("{}: row {}: {e}", path.display(), i + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(MixtureVector(values));
        }
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone)]
pub enum Transmitter {
    Encoder(EncoderNet),
    Table(AlphabetTable),
}

impl Transmitter {
    pub fn symbols(&self) -> usize {
        match self {
            Transmitter::Encoder(e) => e.symbols(),
            Transmitter::Table(t) => t.len(),
        }
    }

    pub fn mixtures_tape(&self, tape: &mut Tape, store: &ParamStore, symbols: &[usize]) -> Result<Var> {
        match self {
            Transmitter::Encoder(e) => e.encode_tape(tape, store, symbols),
            Transmitter::Table(t) => Ok(tape.constant(t.lookup_batch(symbols)?)),
        }
    }

    pub fn alphabet(&self, store: &ParamStore) -> Result<AlphabetTable> {
        match self {
            Transmitter::Encoder(e) => Ok(AlphabetTable {
                rows: (0..e.symbols()).map(|s| e.encode(store, s)).collect::<Result<_>>()?,
            }),
            Transmitter::Table(t) => Ok(t.clone()),
        }
    }
}

/// Shared receiver network.
#[derive(Debug, Clone)]
pub struct DecoderNet {
    sensors: usize,
    alphabet_sizes: Vec<usize>,
    input_scale: f64,
    bn_gamma: ParamId,
    bn_beta: ParamId,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    l1: Dense,
    l2: Dense,
    l3: Dense,
}

impl DecoderNet {
    fn new<R: Rng>(
        store: &mut ParamStore,
        sensors: usize,
        alphabet_sizes: &[usize],
        input_scale: f64,
        rng: &mut R,
    ) -> Self {
        let n: usize = alphabet_sizes.iter().sum();
        let bn_gamma = store.add("dec.bn.gamma", Matrix::filled(1, sensors, 1.0));
        let bn_beta = store.add("dec.bn.beta", Matrix::zeros(1, sensors));
        let l1 = Dense::new(store, "dec.l1", sensors, HIDDEN, he_bound(sensors), rng);
        let l2 = Dense::new(store, "dec.l2", HIDDEN, HIDDEN, he_bound(HIDDEN), rng);
        let l3 = Dense::new(store, "dec.l3", HIDDEN, n, output_bound(HIDDEN), rng);
        Self {
            sensors,
            alphabet_sizes: alphabet_sizes.to_vec(),
            input_scale,
            bn_gamma,
            bn_beta,
            running_mean: vec![0.0; sensors],
            running_var: vec![1.0; sensors],
            l1,
            l2,
            l3,
        }
    }

    pub fn alphabet_sizes(&self) -> &[usize] {
        &self.alphabet_sizes
    }

    pub fn running_stats(&self) -> (&[f64], &[f64]) {
        (&self.running_mean, &self.running_var)
    }

    /// Logits (K×N) for sensor readings `z` (K×R).
    pub fn logits_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats>)> {
        if tape.value(z).cols() != self.sensors {
            return Err(Error::Shape(format!(
                "decoder expects {} sensor readings, got {}",
                self.sensors,
                tape.value(z).cols()
            )));
        }
        let scaled = tape.scale(z, 1.0 / self.input_scale);
        let gamma = tape.param(store, self.bn_gamma);
        let beta = tape.param(store, self.bn_beta);
        let (normed, stats) = match mode {
            Mode::Train => {
                let (v, s) = tape.batch_norm(scaled, gamma, beta, BN_EPS)?;
                (v, Some(s))
            }
            Mode::Eval => (
                tape.frozen_batch_norm(scaled, gamma, beta, &self.running_mean, &self.running_var, BN_EPS)?,
                None,
            ),
        };
        let h = self.l1.apply(tape, store, normed)?;
        let h = tape.relu(h);
        let h = self.l2.apply(tape, store, h)?;
        let h = tape.relu(h);
        Ok((self.l3.apply(tape, store, h)?, stats))
    }

    /// Per-user logit segments of a K×N logit node.
    pub fn split_tape(&self, tape: &mut Tape, logits: Var) -> Result<Vec<Var>> {
        let mut start = 0;
        let mut parts = Vec::with_capacity(self.alphabet_sizes.len());
        for &n in &self.alphabet_sizes {
            parts.push(tape.slice(logits, start, n)?);
            start += n;
        }
        Ok(parts)
    }

    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        for (r, b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }

    /// Per-user likelihood vectors for every row of `z`, indexed
    /// `[user][item][symbol]`. Train mode updates the running statistics.
    pub fn decode(&mut self, store: &ParamStore, z: &Matrix, mode: Mode) -> Result<Vec<Vec<Vec<f64>>>> {
        let (out, stats) = self.likelihoods(store, z, mode)?;
        if let Some(s) = stats {
            self.update_running_stats(&s);
        }
        Ok(out)
    }

    /// Eval-mode likelihoods; never mutates the network.
    pub fn decode_eval(&self, store: &ParamStore, z: &Matrix) -> Result<Likelihoods> {
        Ok(self.likelihoods(store, z, Mode::Eval)?.0)
    }

    fn likelihoods(&self, store: &ParamStore, z: &Matrix, mode: Mode) -> Result<(Likelihoods, Option<BatchStats>)> {
        if let Some(pos) = z.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!(
                "non-finite sensor reading at item {}, sensor {}: {:?}",
                pos / z.cols().max(1),
                pos % z.cols().max(1),
                z.row(pos / z.cols().max(1))
            )));
        }
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let (logits, stats) = self.logits_tape(&mut tape, store, zv, mode)?;
        let parts = self.split_tape(&mut tape, logits)?;
        let out = parts
            .into_iter()
            .map(|p| {
                let sm = tape.softmax(p);
                let m = tape.value(sm);
                (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
            })
            .collect();
        Ok((out, stats))
    }

    /// Hard decisions `[item][user]` in eval mode.
    pub fn detect_batch(&self, store: &ParamStore, z: &Matrix) -> Result<Vec<Vec<usize>>> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let (logits, _) = self.logits_tape(&mut tape, store, zv, Mode::Eval)?;
        let l = tape.value(logits);
        Ok((0..l.rows())
            .map(|r| {
                let row = l.row(r);
                let mut start = 0;
                self.alphabet_sizes
                    .iter()
                    .map(|&n| {
                        // argmax over logits equals argmax over softmax
                        let s = detect(&row[start..start + n]);
                        start += n;
                        s
                    })
                    .collect()
            })
            .collect())
    }
}

/// Index of the largest entry; ties go to the smallest index.
pub fn detect(likelihoods: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in likelihoods.iter().enumerate() {
        if *v > likelihoods[best] {
            best = i;
        }
    }
    best
}

/// Transmitters of all users, the decoder, and their parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub store: ParamStore,
    pub transmitters: Vec<Transmitter>,
    pub decoder: DecoderNet,
    pub seed: u64,
    molecules: usize,
    sensors: usize,
    x_max: f64,
}

impl Model {
    /// One learned encoder per user. `input_scale` is the sensor output
    /// scale used to normalize decoder inputs.
    pub fn autoencoder(system: &SystemConfig, input_scale: f64, seed: u64) -> Self {
        let mut rng = rng::stream(seed, 0);
        let mut store = ParamStore::new();
        let transmitters = system
            .alphabet_sizes
            .iter()
            .enumerate()
            .map(|(u, &n)| {
                Transmitter::Encoder(EncoderNet::new(
                    &mut store,
                    u,
                    n,
                    system.molecules,
                    system.x_max,
                    &mut rng,
                ))
            })
            .collect();
        let decoder = DecoderNet::new(
            &mut store,
            system.sensors,
            &system.alphabet_sizes,
            input_scale,
            &mut rng,
        );
        Self {
            store,
            transmitters,
            decoder,
            seed,
            molecules: system.molecules,
            sensors: system.sensors,
            x_max: system.x_max,
        }
    }

    /// Fixed alphabets at the transmitters, trainable decoder only.
    pub fn with_tables(system: &SystemConfig, tables: Vec<AlphabetTable>, input_scale: f64, seed: u64) -> Result<Self> {
        if tables.len() != system.users() {
            return Err(Error::Config(format!(
                "{} alphabets for {} users",
                tables.len(),
                system.users()
            )));
        }
        for (t, &n) in tables.iter().zip(&system.alphabet_sizes) {
            if t.len() != n
                || t.rows
                    .iter()
                    .any(|r| r.len() != system.molecules || !r.is_feasible(system.x_max))
            {
                return Err(Error::Config(format!(
                    "alphabet must have {n} feasible rows of length {}",
                    system.molecules
                )));
            }
        }
        let mut rng = rng::stream(seed, 0);
        let mut store = ParamStore::new();
        let decoder = DecoderNet::new(
            &mut store,
            system.sensors,
            &system.alphabet_sizes,
            input_scale,
            &mut rng,
        );
        Ok(Self {
            store,
            transmitters: tables.into_iter().map(Transmitter::Table).collect(),
            decoder,
            seed,
            molecules: system.molecules,
            sensors: system.sensors,
            x_max: system.x_max,
        })
    }

    pub fn users(&self) -> usize {
        self.transmitters.len()
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    /// Lookup tables of every user's transmitter.
    pub fn alphabets(&self) -> Result<Vec<AlphabetTable>> {
        self.transmitters.iter().map(|t| t.alphabet(&self.store)).collect()
    }

    pub fn export_alphabet(&self, user: usize) -> Result<AlphabetTable> {
        self.transmitters
            .get(user)
            .ok_or_else(|| Error::Usage(format!("no user {user}")))?
            .alphabet(&self.store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = WeightFile::from_model(self)?;
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                what: "weights file".into(),
            },
            _ => Error::Io(e),
        })?;
        let file: WeightFile = serde_json::from_str(&text)?;
        file.into_model()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum TransmitterRecord {
    Encoder,
    Table { rows: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    rows: usize,
    cols: usize,
    /// Row-major.
    data: Vec<f64>,
}

/// Portable weights: architecture, every tensor in row-major order, batchnorm
/// running statistics and the creation seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WeightFile {
    format: String,
    version: u32,
    seed: u64,
    molecules: usize,
    sensors: usize,
    alphabet_sizes: Vec<usize>,
    hidden: usize,
    x_max: f64,
    input_scale: f64,
    bn_momentum: f64,
    bn_eps: f64,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    transmitters: Vec<TransmitterRecord>,
    params: Vec<ParamRecord>,
}

const WEIGHT_FORMAT: &str = "molmix-weights";

impl WeightFile {
    fn from_model(m: &Model) -> Result<Self> {
        Ok(Self {
            format: WEIGHT_FORMAT.into(),
            version: 1,
            seed: m.seed,
            molecules: m.molecules,
            sensors: m.sensors,
            alphabet_sizes: m.decoder.alphabet_sizes.clone(),
            hidden: HIDDEN,
            x_max: m.x_max,
            input_scale: m.decoder.input_scale,
            bn_momentum: BN_MOMENTUM,
            bn_eps: BN_EPS,
            running_mean: m.decoder.running_mean.clone(),
            running_var: m.decoder.running_var.clone(),
            transmitters: m
                .transmitters
                .iter()
                .map(|t| match t {
                    Transmitter::Encoder(_) => TransmitterRecord::Encoder,
                    Transmitter::Table(t) => TransmitterRecord::Table {
                        rows: t.rows.iter().map(|r| r.0.clone()).collect(),
                    },
                })
                .collect(),
            params: m
                .store
                .ids()
                .map(|id| {
                    let v = m.store.value(id);
                    ParamRecord {
                        name: m.store.name(id).to_string(),
                        rows: v.rows(),
                        cols: v.cols(),
                        data: v.as_slice().to_vec(),
                    }
                })
                .collect(),
        })
    }

    fn into_model(self) -> Result<Model> {
        if self.format != WEIGHT_FORMAT || self.version != 1 {
            return Err(Error::Config(format!(
                "unsupported weight file {} v{}",
                self.format, self.version
            )));
        }
        if self.hidden != HIDDEN {
            return Err(Error::Config(format!("hidden width {} unsupported", self.hidden)));
        }
        if self.transmitters.len() != self.alphabet_sizes.len() {
            return Err(Error::Config("transmitter count does not match users".into()));
        }
        let mut store = ParamStore::new();
        for p in self.params {
            store.add(p.name, Matrix::from_vec(p.rows, p.cols, p.data)?);
        }
        let transmitters = self
            .transmitters
            .into_iter()
            .enumerate()
            .map(|(u, t)| match t {
                TransmitterRecord::Encoder => {
                    EncoderNet::lookup(&store, u, self.alphabet_sizes[u], self.molecules, self.x_max)
                        .map(Transmitter::Encoder)
                }
                TransmitterRecord::Table { rows } => Ok(Transmitter::Table(AlphabetTable {
                    rows: rows.into_iter().map(MixtureVector).collect(),
                })),
            })
            .collect::<Result<Vec<_>>>()?;
        let find = |name: &str| {
            store
                .find(name)
                .ok_or_else(|| Error::Config(format!("weight file lacks parameter {name}")))
        };
        let decoder = DecoderNet {
            sensors: self.sensors,
            alphabet_sizes: self.alphabet_sizes,
            input_scale: self.input_scale,
            bn_gamma: find("dec.bn.gamma")?,
            bn_beta: find("dec.bn.beta")?,
            running_mean: self.running_mean,
            running_var: self.running_var,
            l1: Dense::lookup(&store, "dec.l1")?,
            l2: Dense::lookup(&store, "dec.l2")?,
            l3: Dense::lookup(&store, "dec.l3")?,
        };
        Ok(Model {
            store,
            transmitters,
            decoder,
            seed: self.seed,
            molecules: self.molecules,
            sensors: self.sensors,
            x_max: self.x_max,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn system() -> SystemConfig {
        SystemConfig::reference(3, 2, vec![4], 2e4, 0.01)
    }

    #[test]
    fn zero_weights_give_half_scale() {
        let mut m = Model::autoencoder(&system(), 1e-5, 1);
        for id in m.store.ids().collect::<Vec<_>>() {
            m.store.value_mut(id).as_mut_slice().fill(0.0);
        }
        let Transmitter::Encoder(e) = &m.transmitters[0] else {
            unreachable!()
        };
        assert_eq!(e.encode(&m.store, 2).unwrap().0, vec![1e4; 3]);
    }

    #[test]
    fn encoding_is_deterministic_and_feasible() {
        let m = Model::autoencoder(&system(), 1e-5, 9);
        let Transmitter::Encoder(e) = &m.transmitters[0] else {
            unreachable!()
        };
        for s in 0..4 {
            let a = e.encode(&m.store, s).unwrap();
            assert_eq!(a, e.encode(&m.store, s).unwrap());
            assert!(a.is_feasible(2e4));
        }
        assert!(matches!(e.encode(&m.store, 4), Err(Error::Usage(_))));
    }

    #[test]
    fn exported_table_matches_encoder() {
        let m = Model::autoencoder(&system(), 1e-5, 2);
        let table = m.export_alphabet(0).unwrap();
        assert_eq!(table.len(), 4);
        let Transmitter::Encoder(e) = &m.transmitters[0] else {
            unreachable!()
        };
        for s in 0..4 {
            assert_eq!(table.rows[s], e.encode(&m.store, s).unwrap());
        }
    }

    #[test]
    fn detect_tie_breaks_low() {
        assert_eq!(detect(&[0.1, 0.7, 0.1, 0.1]), 1);
        assert_eq!(detect(&[0.25; 4]), 0);
        assert_eq!(detect(&[0.0, 0.0, 1.0, 0.0]), 2);
    }

    #[test]
    fn two_user_decoder_segments() {
        let sys = SystemConfig::reference(4, 3, vec![4, 4], 1.5e4, 1e-2);
        let mut m = Model::autoencoder(&sys, 1e-5, 3);
        let z = Matrix::from_rows(&[vec![1e-5, 2e-5, 3e-6], vec![4e-6, 1e-5, 9e-6]]).unwrap();
        let out = m.decoder.decode(&m.store, &z, Mode::Train).unwrap();
        assert_eq!(out.len(), 2);
        for user in &out {
            for l in user {
                assert_eq!(l.len(), 4);
                assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(l.iter().all(|p| *p >= 0.0));
            }
        }
        let a = m.decoder.decode_eval(&m.store, &z).unwrap();
        assert_eq!(a, m.decoder.decode_eval(&m.store, &z).unwrap());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let m = Model::autoencoder(&system(), 1e-5, 3);
        let z = Matrix::from_rows(&[vec![f64::NAN, 0.0]]).unwrap();
        assert!(matches!(m.decoder.decode_eval(&m.store, &z), Err(Error::Evaluation(_))));
    }

    #[test]
    fn same_seed_same_initialization() {
        let a = Model::autoencoder(&system(), 1e-5, 5);
        let b = Model::autoencoder(&system(), 1e-5, 5);
        let c = Model::autoencoder(&system(), 1e-5, 6);
        assert_eq!(a.store.flatten(), b.store.flatten());
        assert_ne!(a.store.flatten(), c.store.flatten());
    }
}
