//! Data owner, cloud server and query client, plus the transports that
//! carry `WireMessage`s between them.

use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sknn_core::aspe::{self, AspeEncPoint, AspeKey};
use sknn_core::numerics::{Scaled, DEFAULT_DATA_SCALE};
use sknn_core::paillier::{Keypair, DEFAULT_KEY_BITS};
use sknn_core::select::RecordId;
use sknn_core::vsknn::{self, VerifyKey, VsknnError};
use sknn_core::zhu::{self, DataKey, EncPoint, QueryUser, ZhuError};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::wire::{read_frame, write_frame, Body, EncryptedQuery, Scheme, WireError, WireMessage};

/// Anything that answers protocol messages.
pub trait Handler: Send + Sync {
    fn handle(&self, msg: WireMessage) -> WireMessage;
}

/// Secret key material held by the data owner.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum OwnerKeys {
    Aspe { key: AspeKey },
    Zhu { data: DataKey },
    Vsknn { data: DataKey, verify: VerifyKey },
}

impl OwnerKeys {
    pub fn scheme(&self) -> Scheme {
        match self {
            OwnerKeys::Aspe { .. } => Scheme::Aspe,
            OwnerKeys::Zhu { .. } => Scheme::Zhu,
            OwnerKeys::Vsknn { .. } => Scheme::Vsknn,
        }
    }

    /// Fresh keys with `c = eps = 2` and check length `l`.
    pub fn generate<R: Rng + ?Sized>(scheme: Scheme, dims: zhu::SchemeDims, l: usize, rng: &mut R) -> anyhow::Result<Self> {
        Ok(match scheme {
            Scheme::Aspe => OwnerKeys::Aspe { key: AspeKey::generate(dims.d, rng)? },
            Scheme::Zhu => OwnerKeys::Zhu { data: DataKey::generate(dims, rng)? },
            Scheme::Vsknn => {
                let (data, verify) = vsknn::keygen(dims, l, rng)?;
                OwnerKeys::Vsknn { data, verify }
            }
        })
    }

    pub fn d(&self) -> usize {
        match self {
            OwnerKeys::Aspe { key } => key.d,
            OwnerKeys::Zhu { data } | OwnerKeys::Vsknn { data, .. } => data.dims.d,
        }
    }

    pub fn verify_key(&self) -> Option<&VerifyKey> {
        match self {
            OwnerKeys::Vsknn { verify, .. } => Some(verify),
            _ => None,
        }
    }
}

/// Outsourced table as held by the cloud server.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", content = "points", rename_all = "lowercase")]
pub enum EncryptedDb {
    Aspe(Vec<AspeEncPoint>),
    Zhu(Vec<EncPoint>),
    Vsknn(Vec<EncPoint>),
}

impl EncryptedDb {
    pub fn scheme(&self) -> Scheme {
        match self {
            EncryptedDb::Aspe(_) => Scheme::Aspe,
            EncryptedDb::Zhu(_) => Scheme::Zhu,
            EncryptedDb::Vsknn(_) => Scheme::Vsknn,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            EncryptedDb::Aspe(v) => v.len(),
            EncryptedDb::Zhu(v) | EncryptedDb::Vsknn(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct DataOwner {
    keys: OwnerKeys,
    rng: Mutex<ChaCha20Rng>,
}

impl DataOwner {
    pub fn new(keys: OwnerKeys, seed: u64) -> Self {
        DataOwner { keys, rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)) }
    }

    pub fn keys(&self) -> &OwnerKeys {
        &self.keys
    }

    /// Encrypts every record; per-record randomness derives from `seed`.
    pub fn encrypt_dataset(&self, ds: &Dataset, seed: u64) -> anyhow::Result<EncryptedDb> {
        anyhow::ensure!(ds.d == self.keys.d(), "dataset has d = {}, key has d = {}", ds.d, self.keys.d());
        Ok(match &self.keys {
            OwnerKeys::Aspe { key } => EncryptedDb::Aspe(
                ds.points
                    .iter()
                    .map(|(id, p)| key.encrypt_record(*id, p))
                    .collect::<Result<_, _>>()?,
            ),
            OwnerKeys::Zhu { data } => EncryptedDb::Zhu(data.encrypt_points(&ds.points, seed)?),
            OwnerKeys::Vsknn { data, .. } => EncryptedDb::Vsknn(data.encrypt_points(&ds.points, seed)?),
        })
    }

    fn answer(&self, msg: &WireMessage) -> Result<Body, String> {
        let Body::QueryEncRequest(req) = &msg.body else {
            return Err(format!("data owner cannot handle {}", msg.body.kind()));
        };
        // One session at a time per owner.
        let mut rng = self.rng.lock().expect("owner rng poisoned");
        match &self.keys {
            OwnerKeys::Zhu { data } => zhu::query_step2(data, req, &mut *rng)
                .map(|(reply, _)| Body::QueryEncResponseZhu(reply))
                .map_err(|e| e.to_string()),
            OwnerKeys::Vsknn { data, verify } => vsknn::query_step2_3(data, verify, req, &mut *rng)
                .map(|(reply, _)| Body::QueryEncResponseVsknn(reply))
                .map_err(|e| e.to_string()),
            OwnerKeys::Aspe { .. } => Err("query encryption is local in this scheme".into()),
        }
    }
}

impl Handler for DataOwner {
    fn handle(&self, msg: WireMessage) -> WireMessage {
        let scheme = self.keys.scheme();
        if msg.scheme != scheme {
            return WireMessage::error(scheme, format!("owner serves {scheme}, got {}", msg.scheme));
        }
        match self.answer(&msg) {
            Ok(body) => WireMessage::new(scheme, body),
            Err(e) => WireMessage::error(scheme, e),
        }
    }
}

pub struct CloudServer {
    db: EncryptedDb,
    verify: Option<VerifyKey>,
}

impl CloudServer {
    pub fn new(db: EncryptedDb, verify: Option<VerifyKey>) -> anyhow::Result<Self> {
        anyhow::ensure!(
            (db.scheme() == Scheme::Vsknn) == verify.is_some(),
            "a verification key is needed exactly for the verifiable scheme"
        );
        Ok(CloudServer { db, verify })
    }

    fn knn(&self, query: &EncryptedQuery, k: usize) -> Body {
        let out = match (&self.db, query, &self.verify) {
            (EncryptedDb::Aspe(db), EncryptedQuery::Aspe { q }, _) => aspe::knn(db, q, k).map_err(|e| e.to_string()),
            (EncryptedDb::Zhu(db), EncryptedQuery::Zhu { q }, _) => zhu::knn(db, &q.vec, k).map_err(|e| e.to_string()),
            (EncryptedDb::Vsknn(db), EncryptedQuery::Vsknn { token }, Some(vk)) => match vsknn::knn(db, token, k, vk) {
                Err(VsknnError::FakeQuery) => return Body::FakeQueryError { reason: "verification failed".into() },
                other => other.map_err(|e| e.to_string()),
            },
            _ => Err("query form does not match the stored scheme".into()),
        };
        match out {
            Ok(ids) => Body::KnnResponse { ids },
            Err(message) => Body::Error { message },
        }
    }
}

impl Handler for CloudServer {
    fn handle(&self, msg: WireMessage) -> WireMessage {
        let scheme = self.db.scheme();
        if msg.scheme != scheme {
            return WireMessage::error(scheme, format!("server holds a {scheme} table, got {}", msg.scheme));
        }
        match &msg.body {
            Body::KnnRequest { query, k } => WireMessage::new(scheme, self.knn(query, *k)),
            other => WireMessage::error(scheme, format!("cloud server cannot handle {}", other.kind())),
        }
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("peer closed the connection")]
    Closed,
}

pub trait Transport {
    fn call(&mut self, msg: &WireMessage) -> Result<WireMessage, TransportError>;
}

/// Calls a handler directly, still going through the byte encoding so the
/// exchanged messages are exactly those a socket would carry.
pub struct InProcess<H: Handler> {
    handler: Arc<H>,
}

impl<H: Handler> InProcess<H> {
    pub fn new(handler: Arc<H>) -> Self {
        InProcess { handler }
    }
}

impl<H: Handler> Transport for InProcess<H> {
    fn call(&mut self, msg: &WireMessage) -> Result<WireMessage, TransportError> {
        let req = WireMessage::from_bytes(&msg.to_bytes())?;
        let reply = self.handler.handle(req);
        Ok(WireMessage::from_bytes(&reply.to_bytes())?)
    }
}

pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpTransport {
    pub fn connect(addr: impl ToSocketAddrs) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(TcpTransport { reader: BufReader::new(stream.try_clone()?), writer: BufWriter::new(stream) })
    }
}

impl Transport for TcpTransport {
    fn call(&mut self, msg: &WireMessage) -> Result<WireMessage, TransportError> {
        write_frame(&mut self.writer, msg)?;
        read_frame(&mut self.reader)?.ok_or(TransportError::Closed)
    }
}

fn serve_connection(stream: TcpStream, handler: &dyn Handler) -> Result<(), WireError> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some(msg) = read_frame(&mut reader)? {
        write_frame(&mut writer, &handler.handle(msg))?;
    }
    Ok(())
}

/// Accepts connections forever, one thread each.
pub fn serve(listener: TcpListener, handler: Arc<dyn Handler>) -> std::io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let handler = Arc::clone(&handler);
        thread::spawn(move || {
            if let Err(e) = serve_connection(stream, handler.as_ref()) {
                eprintln!("connection closed with error: {e}");
            }
        });
    }
    Ok(())
}

/// Binds an ephemeral local port and serves in the background.
pub fn spawn_local_server(handler: Arc<dyn Handler>) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    thread::spawn(move || serve(listener, handler));
    Ok(addr)
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("the cloud server rejected the query as fake")]
    FakeQuery,
    #[error("peer reported: {0}")]
    Remote(String),
    #[error("unexpected {got} message")]
    Unexpected { got: &'static str },
    #[error("{0}")]
    Local(String),
}

impl From<ZhuError> for SessionError {
    fn from(e: ZhuError) -> Self {
        SessionError::Local(e.to_string())
    }
}

impl From<VsknnError> for SessionError {
    fn from(e: VsknnError) -> Self {
        SessionError::Local(e.to_string())
    }
}

fn unexpected(body: Body) -> SessionError {
    match body {
        Body::Error { message } => SessionError::Remote(message),
        Body::FakeQueryError { .. } => SessionError::FakeQuery,
        other => SessionError::Unexpected { got: other.kind() },
    }
}

/// Query user. For ASPE it holds the shared key and encrypts locally.
pub struct QueryClient {
    scheme: Scheme,
    key_bits: u64,
    coord_scale: u32,
    aspe_key: Option<AspeKey>,
    rng: ChaCha20Rng,
}

impl QueryClient {
    pub fn new(scheme: Scheme, seed: u64) -> Self {
        QueryClient {
            scheme,
            key_bits: DEFAULT_KEY_BITS,
            coord_scale: DEFAULT_DATA_SCALE,
            aspe_key: None,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn with_key_bits(mut self, bits: u64) -> Self {
        self.key_bits = bits;
        self
    }

    pub fn with_coord_scale(mut self, scale: u32) -> Self {
        self.coord_scale = scale;
        self
    }

    pub fn with_aspe_key(mut self, key: AspeKey) -> Self {
        self.aspe_key = Some(key);
        self
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Query encryption; talks to the data owner except under ASPE.
    pub fn encrypt(&mut self, q: &[Scaled], owner: Option<&mut dyn Transport>) -> Result<EncryptedQuery, SessionError> {
        if self.scheme == Scheme::Aspe {
            let key = self.aspe_key.as_ref().ok_or_else(|| SessionError::Local("no ASPE key loaded".into()))?;
            let q = key.encrypt_query_random(q, &mut self.rng).map_err(|e| SessionError::Local(e.to_string()))?;
            return Ok(EncryptedQuery::Aspe { q });
        }
        let owner = owner.ok_or_else(|| SessionError::Local("no data owner connection".into()))?;
        let qu = QueryUser::new(Keypair::generate(self.key_bits, &mut self.rng).map_err(ZhuError::from)?, q.len(), self.coord_scale);
        let req = qu.request(q, &mut self.rng)?;
        let reply = owner.call(&WireMessage::new(self.scheme, Body::QueryEncRequest(req)))?;
        match (self.scheme, reply.body) {
            (Scheme::Zhu, Body::QueryEncResponseZhu(r)) => Ok(EncryptedQuery::Zhu { q: zhu::query_step3(&qu, &r)? }),
            (Scheme::Vsknn, Body::QueryEncResponseVsknn(r)) => Ok(EncryptedQuery::Vsknn { token: vsknn::query_step4(&qu, &r)? }),
            (_, other) => Err(unexpected(other)),
        }
    }

    /// Submits an encrypted query; returns the server's full reply.
    pub fn submit(&self, query: EncryptedQuery, k: usize, cloud: &mut dyn Transport) -> Result<WireMessage, SessionError> {
        Ok(cloud.call(&WireMessage::new(self.scheme, Body::KnnRequest { query, k }))?)
    }

    pub fn query(
        &mut self,
        q: &[Scaled],
        k: usize,
        owner: Option<&mut dyn Transport>,
        cloud: &mut dyn Transport,
    ) -> Result<Vec<RecordId>, SessionError> {
        let query = self.encrypt(q, owner)?;
        match self.submit(query, k, cloud)?.body {
            Body::KnnResponse { ids } => Ok(ids),
            other => Err(unexpected(other)),
        }
    }
}

/// One full query session: encryption (with the owner where the scheme
/// needs it) followed by the kNN request.
pub fn run_session(
    client: &mut QueryClient,
    owner: Option<&mut dyn Transport>,
    cloud: &mut dyn Transport,
    q: &[Scaled],
    k: usize,
) -> Result<Vec<RecordId>, SessionError> {
    client.query(q, k, owner, cloud)
}
