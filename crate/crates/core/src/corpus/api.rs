//! Client for an Etherscan-style `getsourcecode` endpoint.
//!
//! Requests go out one at a time. Transport failures and 5xx responses are
//! retried with exponential backoff up to a fixed number of attempts, as
//! are rate-limit replies; the final failure is reported to the caller.

use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::Value;

use crate::disasm::{parse_hex, to_hex_tokens};
use crate::error::{Error, Result};

pub const DEFAULT_URL: &str = "https://api.etherscan.io/api";
pub const API_KEY_VAR: &str = "ETHERSCAN_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// One HTTP GET. An `Err` is a transport failure (no response at all).
pub trait Transport {
    fn get(&self, url: &str, query: &[(&str, &str)]) -> std::result::Result<HttpResponse, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(30))
    }
}

impl Transport for UreqTransport {
    fn get(&self, url: &str, query: &[(&str, &str)]) -> std::result::Result<HttpResponse, String> {
        let mut req = self.agent.get(url);
        for (k, v) in query {
            req = req.query(*k, *v);
        }
        let mut resp = req.call().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

/// A fetched contract before labeling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchedContract {
    pub address: String,
    pub contract_name: String,
    pub hex_tokens: Vec<String>,
    pub source_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fetch {
    Contract(FetchedContract),
    /// Excluded (multi-file source, unverified, or no code).
    Skip { address: String, reason: String },
}

#[derive(Debug, Deserialize)]
struct Envelope {
    #[serde(default)]
    status: Option<String>,
    #[serde(default)]
    message: Option<String>,
    result: Value,
}

#[derive(Debug, Deserialize)]
struct SourceEntry {
    #[serde(alias = "SourceCode", default)]
    #[serde(rename = "sourceCode")]
    source_code: String,
    #[serde(alias = "ContractName", default)]
    #[serde(rename = "contractName")]
    contract_name: String,
    #[serde(alias = "Bytecode", default)]
    bytecode: Option<String>,
}

pub struct ApiClient<T: Transport> {
    pub transport: T,
    pub base_url: String,
    pub api_key: String,
    pub max_attempts: u32,
    pub base_delay: Duration,
    /// Where `ContractAddress_ContractName.sol` files are written.
    pub source_dir: Option<PathBuf>,
}

impl<T: Transport> ApiClient<T> {
    pub fn new(transport: T, api_key: impl Into<String>) -> Self {
        Self {
            transport,
            base_url: DEFAULT_URL.into(),
            api_key: api_key.into(),
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            source_dir: None,
        }
    }

    fn request(&self, query: &[(&str, &str)]) -> Result<Value> {
        let mut last = String::new();
        let mut limited = false;
        for attempt in 0..self.max_attempts.max(1) {
            if attempt > 0 {
                thread::sleep(self.base_delay * 2u32.pow(attempt - 1));
            }
            let resp = match self.transport.get(&self.base_url, query) {
                Ok(r) => r,
                Err(e) => {
                    last = e;
                    limited = false;
                    continue;
                }
            };
            if resp.status == 429 {
                last = format!("HTTP 429: {}", resp.body.trim());
                limited = true;
                continue;
            }
            if resp.status >= 500 {
                last = format!("HTTP {}", resp.status);
                limited = false;
                continue;
            }
            if resp.status >= 400 {
                return Err(Error::Network(format!("HTTP {}", resp.status)));
            }
            let env: Envelope = serde_json::from_str(&resp.body)
                .map_err(|e| Error::ApiFormat(format!("unparseable body: {e}")))?;
            if let Value::String(msg) = &env.result {
                if msg.to_ascii_lowercase().contains("rate limit") {
                    last = msg.clone();
                    limited = true;
                    continue;
                }
                if env.status.as_deref() == Some("0") {
                    return Err(Error::ApiFormat(format!(
                        "{}: {msg}",
                        env.message.unwrap_or_default()
                    )));
                }
            }
            return Ok(env.result);
        }
        if limited {
            Err(Error::RateLimited(last))
        } else {
            Err(Error::Network(format!(
                "{} after {} attempts",
                last,
                self.max_attempts.max(1)
            )))
        }
    }

    fn fetch_code(&self, address: &str) -> Result<String> {
        let result = self.request(&[
            ("module", "proxy"),
            ("action", "eth_getCode"),
            ("address", address),
            ("tag", "latest"),
            ("apikey", &self.api_key),
        ])?;
        match result {
            Value::String(s) => Ok(s),
            other => Err(Error::ApiFormat(format!("eth_getCode result {other}"))),
        }
    }

    /// Fetches verified source for `address`. Bytecode comes from the
    /// response's bytecode field when present, else from `eth_getCode`.
    pub fn fetch_verified(&self, address: &str) -> Result<Fetch> {
        if self.api_key.is_empty() {
            return Err(Error::Config("API key is empty".into()));
        }
        let result = self.request(&[
            ("module", "contract"),
            ("action", "getsourcecode"),
            ("address", address),
            ("apikey", &self.api_key),
        ])?;
        let entries: Vec<SourceEntry> = serde_json::from_value(result)
            .map_err(|e| Error::ApiFormat(format!("result entries: {e}")))?;
        let entry = entries
            .into_iter()
            .next()
            .ok_or_else(|| Error::ApiFormat("empty result list".into()))?;
        let skip = |reason: &str| {
            Ok(Fetch::Skip {
                address: address.to_string(),
                reason: reason.to_string(),
            })
        };
        if entry.source_code.trim().is_empty() {
            return skip("source not verified");
        }
        if entry.source_code.matches(".sol").count() > 1 {
            return skip("multi-file source");
        }
        let hex = match entry.bytecode {
            Some(b) if !b.trim().is_empty() => b,
            _ => self.fetch_code(address)?,
        };
        let code = parse_hex(&hex).map_err(|e| Error::ApiFormat(format!("bytecode: {e}")))?;
        if code.is_empty() {
            return skip("no deployed code");
        }
        let source_path = match &self.source_dir {
            Some(dir) => Some(save_source(dir, address, &entry.contract_name, &entry.source_code)?),
            None => None,
        };
        Ok(Fetch::Contract(FetchedContract {
            address: address.to_string(),
            contract_name: entry.contract_name,
            hex_tokens: to_hex_tokens(&code),
            source_path,
        }))
    }
}

/// Writes `dir/ADDRESS_NAME.sol` through a temporary file and rename.
pub fn save_source(dir: &Path, address: &str, name: &str, source: &str) -> Result<PathBuf> {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    let path = dir.join(format!("{address}_{safe}.sol"));
    let tmp = dir.join(format!(".{address}_{safe}.sol.tmp"));
    std::fs::write(&tmp, source)?;
    std::fs::rename(&tmp, &path)?;
    Ok(path)
}
