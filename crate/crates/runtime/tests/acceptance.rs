//! Acceptance checks. Each test prints one PASS/FAIL line straight to the
//! process stdout (bypassing capture) and then asserts. A global lock keeps
//! the timing checks from overlapping with other work.

use std::io::Write;
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sknn_core::attack::{self, BasisTokenSet, ObservedToken};
use sknn_core::numerics::{int_vec, parse_vec, Matrix, Perm, Scaled};
use sknn_core::paillier::Keypair;
use sknn_core::vsknn::{self, QueryToken, VerifyKey};
use sknn_core::zhu::{self, Blinding, DataKey, QueryUser, SchemeDims, ZhuEncQuery};
use sknn_runtime::attack_harness::{self, AttackConfig};
use sknn_runtime::bench::{self, BenchParams};
use sknn_runtime::roles::{
    run_session, spawn_local_server, CloudServer, DataOwner, InProcess, OwnerKeys, QueryClient, TcpTransport, Transport,
    TransportError,
};
use sknn_runtime::wire::WireMessage;
use sknn_runtime::{plaintext_knn, Dataset, Scheme};

// Pinned tolerances.
const GOLDEN_MAX_SECONDS: f64 = 1.0;
const ATTACK_TRIALS: usize = 500;
const ATTACK_FALSE_POSITIVE_MAX_FRACTION: f64 = 0.05;
const CORRECTNESS_INSTANCES: usize = 200;
const FAKE_ATTEMPTS: usize = 1000;
const HONEST_TOKENS: usize = 1000;
const BETA_REVEAL_MAX_FRACTION: f64 = 0.01;
const LINEAR_R2_MIN: f64 = 0.95;
const VERIFY_SPREAD_MAX: f64 = 2.0;
const QUERY_ENC_MAX_SECONDS: f64 = 5.0;
const PAILLIER_PAIRS: usize = 1000;
const TEST_KEY_BITS: u64 = 512;

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: &str, name: &str, ok: bool, detail: &str) {
    let line = format!("\n{} [{id}] {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    // the harness captures print! and io::stdout, so go around it
    match std::fs::OpenOptions::new().append(true).open("/dev/stdout") {
        Ok(mut out) => out.write_all(line.as_bytes()).unwrap(),
        Err(_) => print!("{line}"),
    }
    assert!(ok, "{}", line.trim_end());
}

fn v(xs: &[&str]) -> Vec<Scaled> {
    parse_vec(xs).unwrap()
}

fn worked_example_key() -> DataKey {
    let m = Matrix::from_rows(vec![
        v(&["6.7", "1.2", "2.6", "3.3", "5.5"]),
        v(&["9.2", "45", "11", "3.2", "19"]),
        v(&["17", "1.5", "8.3", "2.1", "14"]),
        v(&["30", "2.9", "16", "20", "6.2"]),
        v(&["11", "28", "3.6", "23", "13"]),
    ])
    .unwrap();
    let perm = Perm::from_one_based(&[3, 1, 4, 5, 2]).unwrap();
    DataKey::from_parts(SchemeDims::new(2, 1, 1).unwrap(), m, perm, int_vec(&[0, 0, 0]), int_vec(&[0])).unwrap()
}

fn fixed_session(key: &DataKey, qu: &QueryUser, q: &[i64], beta: i64, r: i64, rng: &mut ChaCha20Rng) -> ZhuEncQuery {
    let req = qu.request(&int_vec(q), rng).unwrap();
    let b = Blinding { beta: BigInt::from(beta), r: int_vec(&[r]) };
    zhu::query_step3(qu, &zhu::query_step2_with(key, &req, &b, rng).unwrap()).unwrap()
}

#[test]
fn golden_fixture_bit_exact() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let key = worked_example_key();
    let qu = QueryUser::new(Keypair::generate(TEST_KEY_BITS, &mut rng).unwrap(), 2, 0);

    let q = fixed_session(&key, &qu, &[13, 97], 131, 43, &mut rng);
    let mut checks = vec![
        ("q'", q.vec == v(&["87455.6", "381236.2", "229433.4", "177780.1", "234594.8"])),
        ("beta", attack::extract_beta(&q).unwrap() == Scaled::from_int(131)),
    ];
    let t0 = attack::reduce_token(&fixed_session(&key, &qu, &[0, 0], 21, 31, &mut rng)).unwrap();
    let t2 = attack::reduce_token(&fixed_session(&key, &qu, &[0, 1], 37, 173, &mut rng)).unwrap();
    let t1 = attack::reduce_token(&fixed_session(&key, &qu, &[1, 0], 53, 97, &mut rng)).unwrap();
    checks.push(("token 0^d", t0.vec == v(&["87.3", "350.2", "274.3", "526.0", "122.6"])));
    checks.push(("token (0,1)", t2.vec == v(&["462.0", "1931.2", "1466.9", "2804.2", "646.8"])));
    checks.push(("token (1,0)", t1.vec == v(&["260.1", "1121.2", "823.6", "1584.9", "388.2"])));
    let basis = BasisTokenSet { d: 2, zero: t0, units: vec![t1, t2], extracted: vec![] };
    let forged = attack::forge_query(&basis, &int_vec(&[13, 81])).unwrap();
    checks.push(("forged (13,81)", forged.vec == v(&["32684.4", "138434.2", "104015.8", "198825.9", "46035.6"])));
    let secs = start.elapsed().as_secs_f64();

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let ok = failed.is_empty() && secs < GOLDEN_MAX_SECONDS;
    verdict("1", "golden fixture", ok, &format!("{} of 6 vectors exact {failed:?}, {secs:.3}s", 6 - failed.len()));
}

#[test]
fn forged_zhu_tokens_match_plaintext_knn() {
    let _g = serial();
    let cfg = AttackConfig {
        scheme: Scheme::Zhu,
        dims: vec![2, 5, 10],
        trials: ATTACK_TRIALS,
        m: 1000,
        k: 5,
        key_bits: TEST_KEY_BITS,
        seed: 2,
    };
    let r = attack_harness::run_zhu(&cfg).unwrap();
    let fp_ok = (r.gcd_false_positive_trials as f64) <= ATTACK_FALSE_POSITIVE_MAX_FRACTION * r.trials as f64;
    let ok = r.clean_successes() == r.clean_trials() && r.clean_trials() > 0 && fp_ok;
    verdict(
        "2",
        "attack success",
        ok,
        &format!(
            "{}/{} clean trials matched; {} gcd false-positive trials ({} of them still matched); {} sessions",
            r.clean_successes(),
            r.clean_trials(),
            r.gcd_false_positive_trials,
            r.successes_in_false_positive_trials,
            r.sessions
        ),
    );
}

fn correctness_instance(scheme: Scheme, i: usize, rng: &mut ChaCha20Rng) -> (Vec<u64>, Vec<u64>) {
    let d = 1 + i % 10;
    let m = rng.gen_range(10..=1000);
    let k = [1, 5, 10][i % 3];
    // alternate fine-grained data with a coarse grid full of distance ties
    let ds = if i.is_multiple_of(2) {
        Dataset::synthetic(m, d, 1000, 6, rng.gen())
    } else {
        Dataset::synthetic(m, d, 3, 0, rng.gen())
    };
    let q: Vec<Scaled> = if i % 4 == 1 {
        ds.points[rng.gen_range(0..m)].1.clone()
    } else {
        (0..d).map(|_| Scaled::new(rng.gen_range(-3_000_000..=3_000_000), 6)).collect()
    };
    let keys = OwnerKeys::generate(scheme, SchemeDims::new(d, 2, 2).unwrap(), 2, rng).unwrap();
    let owner = Arc::new(DataOwner::new(keys, rng.gen()));
    let db = owner.encrypt_dataset(&ds, rng.gen()).unwrap();
    let cloud = Arc::new(CloudServer::new(db, owner.keys().verify_key().cloned()).unwrap());
    let mut client = QueryClient::new(scheme, rng.gen()).with_key_bits(TEST_KEY_BITS);
    if let OwnerKeys::Aspe { key } = owner.keys() {
        client = client.with_aspe_key(key.clone());
    }
    let mut to_owner = InProcess::new(owner);
    let mut to_cloud = InProcess::new(cloud);
    let got = run_session(&mut client, Some(&mut to_owner), &mut to_cloud, &q, k).unwrap();
    (got, plaintext_knn(&ds, &q, k).unwrap())
}

#[test]
fn all_schemes_match_plaintext_knn() {
    let _g = serial();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut summary = Vec::new();
    let mut ok = true;
    for scheme in [Scheme::Aspe, Scheme::Zhu, Scheme::Vsknn] {
        let matched = (0..CORRECTNESS_INSTANCES)
            .filter(|&i| {
                let (got, want) = correctness_instance(scheme, i, &mut rng);
                got == want
            })
            .count();
        ok &= matched == CORRECTNESS_INSTANCES;
        summary.push(format!("{scheme} {matched}/{CORRECTNESS_INSTANCES}"));
    }
    verdict("3", "scheme correctness", ok, &summary.join(", "));
}

/// Honest verifiable-scheme sessions shared by the soundness and
/// blinding-leak checks.
struct HonestSessions {
    vk: VerifyKey,
    d: usize,
    tokens: Vec<ObservedToken>,
}

fn honest_sessions() -> &'static HonestSessions {
    static CELL: OnceLock<HonestSessions> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let d = 3;
        let (dk, vk) = vsknn::keygen(SchemeDims::new(d, 2, 2).unwrap(), vsknn::DEFAULT_CHECK_LEN, &mut rng).unwrap();
        let tokens = (0..HONEST_TOKENS)
            .map(|_| {
                // these sessions run at coordinate scale 0
                let q: Vec<Scaled> = (0..d).map(|_| Scaled::from_int(rng.gen_range(-1_000_000..=1_000_000))).collect();
                attack_harness::vsknn_session(&dk, &vk, &q, TEST_KEY_BITS, &mut rng).unwrap()
            })
            .collect();
        HonestSessions { vk, d, tokens }
    })
}

fn random_coefficient(rng: &mut ChaCha20Rng) -> Scaled {
    loop {
        let c = Scaled::new(rng.gen_range(-5000..=5000), rng.gen_range(0..3));
        if !c.is_zero() {
            return c;
        }
    }
}

#[test]
fn verification_rejects_fakes_and_accepts_honest() {
    let _g = serial();
    let hs = honest_sessions();
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let accepts = |t: &QueryToken| vsknn::verify(&hs.vk, t).is_ok();
    let honest = hs.tokens.iter().filter(|o| accepts(&o.token)).count();

    let pick = |rng: &mut ChaCha20Rng| &hs.tokens[rng.gen_range(0..hs.tokens.len())].token;
    let (mut random_acc, mut perturbed_acc, mut combined_acc) = (0, 0, 0);
    let per_kind = FAKE_ATTEMPTS / 3;
    for _ in 0..per_kind {
        let replay = pick(&mut rng).clone();
        let fake = QueryToken {
            q_tilde: (0..hs.vk.eta()).map(|_| Scaled::new(rng.gen_range(-10i64.pow(15)..10i64.pow(15)), replay.scale_meta)).collect(),
            ..replay
        };
        random_acc += accepts(&fake) as usize;
    }
    for _ in 0..per_kind {
        let mut fake = pick(&mut rng).clone();
        let j = rng.gen_range(0..fake.q_tilde.len());
        let delta = Scaled::new(if rng.gen() { 1 } else { rng.gen_range(-1000..=1000i64).max(1) }, fake.scale_meta);
        fake.q_tilde[j] = &fake.q_tilde[j] + &delta;
        perturbed_acc += accepts(&fake) as usize;
    }
    let combined_n = FAKE_ATTEMPTS - 2 * per_kind;
    for _ in 0..combined_n {
        let parts = rng.gen_range(2..=hs.d + 1);
        let mut sum: Option<Vec<Scaled>> = None;
        let mut tagged = Vec::new();
        for _ in 0..parts {
            let t = pick(&mut rng);
            let c = random_coefficient(&mut rng);
            let scaled: Vec<Scaled> = t.q_tilde.iter().map(|x| &c * x).collect();
            sum = Some(match sum {
                None => scaled,
                Some(s) => s.iter().zip(&scaled).map(|(a, b)| a + b).collect(),
            });
            tagged.push(t);
        }
        let donor = tagged[rng.gen_range(0..tagged.len())];
        let fake = QueryToken { q_tilde: sum.unwrap(), tag: donor.tag.clone(), scale_meta: donor.scale_meta };
        combined_acc += accepts(&fake) as usize;
    }
    let fake_acc = random_acc + perturbed_acc + combined_acc;
    let ok = fake_acc == 0 && honest == HONEST_TOKENS;
    verdict(
        "4",
        "verification soundness",
        ok,
        &format!(
            "{fake_acc}/{FAKE_ATTEMPTS} fakes accepted (random {random_acc}, perturbed {perturbed_acc}, combined {combined_acc}); {honest}/{HONEST_TOKENS} honest accepted"
        ),
    );
}

#[test]
fn token_gcd_does_not_reveal_beta() {
    let _g = serial();
    let hs = honest_sessions();
    let revealed = hs.tokens.iter().filter(|o| vsknn::gcd_reveals(&o.token, &o.beta)).count();
    let ok = (revealed as f64) <= BETA_REVEAL_MAX_FRACTION * hs.tokens.len() as f64;
    verdict("5", "no beta leak", ok, &format!("beta divides the token gcd in {revealed}/{} sessions", hs.tokens.len()));
}

#[test]
fn attack_time_is_linear_in_dimension() {
    let _g = serial();
    let p = BenchParams { dims: vec![2, 10, 25, 50, 100], reps: 1, seed: 6, ..BenchParams::default() };
    let r = bench::run(2, &p).unwrap();
    let s = r.series("attack").unwrap();
    let pts: Vec<String> = s.samples.iter().map(|(d, t)| format!("d={d}:{t:.2}s")).collect();
    verdict(
        "6a",
        "attack time linear in d",
        s.fit.r_squared >= LINEAR_R2_MIN,
        &format!("r2={:.4} (min {LINEAR_R2_MIN}) [{}] with {}-bit session keys", s.fit.r_squared, pts.join(" "), p.attack_key_bits),
    );
}

#[test]
fn db_encryption_is_linear_in_size() {
    let _g = serial();
    let p = BenchParams { sizes: vec![1_000, 10_000, 100_000], fixed_d: 10, reps: 1, seed: 7, ..BenchParams::default() };
    let r = bench::run(5, &p).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for s in &r.series {
        ok &= s.fit.r_squared >= LINEAR_R2_MIN;
        let pts: Vec<String> = s.samples.iter().map(|(m, t)| format!("m={m}:{t:.3}s")).collect();
        parts.push(format!("{} r2={:.4} [{}]", s.label, s.fit.r_squared, pts.join(" ")));
    }
    verdict("6b", "db encryption linear in m", ok, &parts.join("; "));
}

#[test]
fn verification_overhead_is_independent_of_size() {
    let _g = serial();
    let p = BenchParams { sizes: vec![1_000, 10_000, 100_000], fixed_d: 10, reps: 21, seed: 8, ..BenchParams::default() };
    let r = bench::run(7, &p).unwrap();
    let verify = r.series("vsknn-verify").unwrap();
    let diff = r.series("difference").unwrap();
    let ys: Vec<f64> = verify.samples.iter().map(|s| s.1).collect();
    let spread = ys.iter().cloned().fold(f64::MIN, f64::max) / ys.iter().cloned().fold(f64::MAX, f64::min);
    let fmt = |s: &bench::Series| s.samples.iter().map(|(m, t)| format!("m={m}:{:.3}ms", t * 1e3)).collect::<Vec<_>>().join(" ");
    verdict(
        "6c",
        "verification cost independent of m",
        spread <= VERIFY_SPREAD_MAX,
        &format!("verify phase [{}] spread {spread:.2}x (max {VERIFY_SPREAD_MAX}); total difference [{}]", fmt(verify), fmt(diff)),
    );
}

#[test]
fn query_encryption_at_d100_is_fast() {
    let _g = serial();
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let (dk, vk) = vsknn::keygen(SchemeDims::new(100, 2, 2).unwrap(), 2, &mut rng).unwrap();
    let q: Vec<Scaled> = (0..100).map(|_| Scaled::new(rng.gen_range(-1_000_000_000i64..=1_000_000_000), 6)).collect();
    let start = Instant::now();
    let (token, _) = vsknn::encrypt_query_local(&dk, &vk, &q, 6, 1024, &mut rng).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ok = secs < QUERY_ENC_MAX_SECONDS && vsknn::verify(&vk, &token).is_ok();
    verdict("6d", "query encryption d=100, 1024-bit", ok, &format!("{secs:.3}s including the query user's key generation (max {QUERY_ENC_MAX_SECONDS}s)"));
}

#[test]
fn paillier_homomorphisms_are_exact() {
    let _g = serial();
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let kp = Keypair::generate(TEST_KEY_BITS, &mut rng).unwrap();
    let mut wrong = 0;
    let mut negative_scalars = 0;
    let big = |rng: &mut ChaCha20Rng, bits: u64| num_bigint::RandBigInt::gen_bigint(rng, bits);
    for i in 0..PAILLIER_PAIRS {
        let a = big(&mut rng, 200);
        let b = if i % 10 == 0 { BigInt::from(rng.gen_range(-3i64..=3)) } else { big(&mut rng, 200) };
        let f = if i % 2 == 0 { -(BigInt::from(big(&mut rng, 40).magnitude().clone()) + BigInt::from(1)) } else { big(&mut rng, 40) };
        negative_scalars += (f < BigInt::from(0)) as usize;
        let ca = kp.encrypt(&a, &mut rng).unwrap();
        let cb = kp.encrypt(&b, &mut rng).unwrap();
        let sum = kp.decrypt(&kp.pk.hom_add(&ca, &cb).unwrap()).unwrap();
        let prod = kp.decrypt(&kp.pk.hom_scale(&ca, &f).unwrap()).unwrap();
        wrong += (sum != &a + &b) as usize + (prod != &a * &f) as usize;
    }
    verdict(
        "7",
        "Paillier homomorphisms",
        wrong == 0,
        &format!("{wrong} mismatches over {PAILLIER_PAIRS} pairs ({negative_scalars} negative scalars)"),
    );
}

/// Wraps a transport and keeps the bytes of every reply.
struct Recording<T> {
    inner: T,
    replies: Vec<Vec<u8>>,
}

impl<T: Transport> Transport for Recording<T> {
    fn call(&mut self, msg: &WireMessage) -> Result<WireMessage, TransportError> {
        let reply = self.inner.call(msg)?;
        self.replies.push(reply.to_bytes());
        Ok(reply)
    }
}

fn recorded_run(scheme: Scheme, sockets: bool) -> Vec<Vec<u8>> {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let keys = OwnerKeys::generate(scheme, SchemeDims::new(4, 2, 2).unwrap(), 2, &mut rng).unwrap();
    let ds = Dataset::synthetic(300, 4, 100, 3, 11);
    let owner = Arc::new(DataOwner::new(keys, 12));
    let db = owner.encrypt_dataset(&ds, 13).unwrap();
    let cloud = Arc::new(CloudServer::new(db, owner.keys().verify_key().cloned()).unwrap());
    let mut client = QueryClient::new(scheme, 14).with_key_bits(TEST_KEY_BITS);
    if let OwnerKeys::Aspe { key } = owner.keys() {
        client = client.with_aspe_key(key.clone());
    }
    let queries: Vec<Vec<Scaled>> = (0..3).map(|i| ds.points[i * 50].1.clone()).collect();
    let mut run = |to_owner: &mut dyn Transport, to_cloud: &mut dyn Transport| {
        for q in &queries {
            run_session(&mut client, Some(&mut *to_owner), &mut *to_cloud, q, 7).unwrap();
        }
    };
    if sockets {
        let do_addr = spawn_local_server(owner).unwrap();
        let cs_addr = spawn_local_server(cloud).unwrap();
        let mut o = Recording { inner: TcpTransport::connect(do_addr).unwrap(), replies: vec![] };
        let mut c = Recording { inner: TcpTransport::connect(cs_addr).unwrap(), replies: vec![] };
        run(&mut o, &mut c);
        o.replies.into_iter().chain(c.replies).collect()
    } else {
        let mut o = Recording { inner: InProcess::new(owner), replies: vec![] };
        let mut c = Recording { inner: InProcess::new(cloud), replies: vec![] };
        run(&mut o, &mut c);
        o.replies.into_iter().chain(c.replies).collect()
    }
}

#[test]
fn socket_and_in_process_sessions_are_byte_identical() {
    let _g = serial();
    let mut summary = Vec::new();
    let mut ok = true;
    for scheme in [Scheme::Aspe, Scheme::Zhu, Scheme::Vsknn] {
        let a = recorded_run(scheme, false);
        let b = recorded_run(scheme, true);
        let same = a == b && !a.is_empty();
        ok &= same;
        summary.push(format!("{scheme} {} replies {}", a.len(), if same { "identical" } else { "differ" }));
    }
    verdict("8", "protocol equivalence", ok, &summary.join(", "));
}
