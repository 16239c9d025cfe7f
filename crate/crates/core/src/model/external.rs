//! Inference adapter for a pretrained encoder-decoder hosted out of process.
//!
//! The host speaks one JSON object per request and one per response:
//!
//! | request `op`              | extra request fields          | response                               |
//! |---------------------------|-------------------------------|----------------------------------------|
//! | `describe`                |                               | `{"vocab": [str], "state_dim": n, "context_length": n?}` |
//! | `next_token_distribution` | `dialogue`, `prefix: [id]`    | `{"probs": [f]}`                       |
//! | `token_logprobs`          | `dialogue`, `tokens: [id]`    | `{"logprobs": [f]}`                    |
//! | `decoder_states`          | `dialogue`, `tokens: [id]`    | `{"states": [[f]]}`                    |
//! | `generate`                | `dialogue`, `max_length`      | `{"text": str, "truncated": bool}`     |
//!
//! Any response may instead be `{"error": str}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{check_summary, DecodeConfig, Generation, ModelError, SummarizationModel, TokenId, TokenizedSummary, Vocab};
use crate::corpus::Dialogue;

pub trait ModelTransport: Send + Sync {
    fn call(&self, request: &Value) -> Result<Value, String>;
}

impl<F> ModelTransport for F
where
    F: Fn(&Value) -> Result<Value, String> + Send + Sync,
{
    fn call(&self, request: &Value) -> Result<Value, String> {
        self(request)
    }
}

/// Line-delimited JSON over a child process's stdin/stdout.
pub struct ProcessTransport {
    child: Mutex<Child>,
    io: Mutex<(ChildStdin, BufReader<ChildStdout>)>,
}

impl ProcessTransport {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, ModelError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| ModelError::Backend(format!("failed to start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            child: Mutex::new(child),
            io: Mutex::new((stdin, stdout)),
        })
    }
}

impl ModelTransport for ProcessTransport {
    fn call(&self, request: &Value) -> Result<Value, String> {
        let mut io = self.io.lock().map_err(|_| "transport poisoned".to_string())?;
        let (stdin, stdout) = &mut *io;
        writeln!(stdin, "{request}").and_then(|_| stdin.flush()).map_err(|e| e.to_string())?;
        let mut line = String::new();
        if stdout.read_line(&mut line).map_err(|e| e.to_string())? == 0 {
            return Err("model host closed its output".into());
        }
        serde_json::from_str(&line).map_err(|e| e.to_string())
    }
}

impl Drop for ProcessTransport {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

#[derive(Deserialize)]
struct Describe {
    vocab: Vec<String>,
    state_dim: usize,
    context_length: Option<usize>,
}

pub struct ExternalModel {
    transport: Box<dyn ModelTransport>,
    vocab: Vocab,
    state_dim: usize,
    context_length: Option<usize>,
    decode: DecodeConfig,
}

impl ExternalModel {
    pub fn connect(transport: Box<dyn ModelTransport>, decode: DecodeConfig) -> Result<Self, ModelError> {
        let desc: Describe = request(transport.as_ref(), json!({"op": "describe"}))?;
        Ok(Self {
            transport,
            vocab: Vocab::from_tokens(desc.vocab),
            state_dim: desc.state_dim,
            context_length: desc.context_length,
            decode,
        })
    }
}

fn request<T: DeserializeOwned>(transport: &dyn ModelTransport, req: Value) -> Result<T, ModelError> {
    let resp = transport.call(&req).map_err(ModelError::Backend)?;
    if let Some(err) = resp.get("error").and_then(Value::as_str) {
        return Err(ModelError::Backend(err.to_string()));
    }
    serde_json::from_value(resp).map_err(|e| ModelError::Backend(format!("bad response to {}: {e}", req["op"])))
}

fn expect_len(expected: usize, found: usize) -> Result<(), ModelError> {
    if expected == found {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch { expected, found })
    }
}

impl SummarizationModel for ExternalModel {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn decode_config(&self) -> &DecodeConfig {
        &self.decode
    }

    fn context_length(&self) -> Option<usize> {
        self.context_length
    }

    fn next_token_distribution(&self, dialogue: &Dialogue, prefix: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        #[derive(Deserialize)]
        struct R {
            probs: Vec<f64>,
        }
        let r: R = request(
            self.transport.as_ref(),
            json!({"op": "next_token_distribution", "dialogue": dialogue.raw_text, "prefix": prefix}),
        )?;
        expect_len(self.vocab.len(), r.probs.len())?;
        Ok(r.probs)
    }

    fn token_logprobs(&self, dialogue: &Dialogue, summary: &TokenizedSummary) -> Result<Vec<f64>, ModelError> {
        check_summary(self, summary)?;
        #[derive(Deserialize)]
        struct R {
            logprobs: Vec<f64>,
        }
        let r: R = request(
            self.transport.as_ref(),
            json!({"op": "token_logprobs", "dialogue": dialogue.raw_text, "tokens": summary.tokens}),
        )?;
        expect_len(summary.len(), r.logprobs.len())?;
        Ok(r.logprobs)
    }

    fn decoder_states(&self, dialogue: &Dialogue, summary: &TokenizedSummary) -> Result<Vec<Vec<f64>>, ModelError> {
        check_summary(self, summary)?;
        #[derive(Deserialize)]
        struct R {
            states: Vec<Vec<f64>>,
        }
        let r: R = request(
            self.transport.as_ref(),
            json!({"op": "decoder_states", "dialogue": dialogue.raw_text, "tokens": summary.tokens}),
        )?;
        expect_len(summary.len(), r.states.len())?;
        for s in &r.states {
            expect_len(self.state_dim, s.len())?;
        }
        Ok(r.states)
    }

    fn generate(&self, dialogue: &Dialogue) -> Result<Generation, ModelError> {
        #[derive(Deserialize)]
        struct R {
            text: String,
            truncated: bool,
        }
        let r: R = request(
            self.transport.as_ref(),
            json!({"op": "generate", "dialogue": dialogue.raw_text, "max_length": self.decode.max_length}),
        )?;
        Ok(Generation {
            tokens: self.vocab.encode_source(&r.text),
            text: r.text,
            truncated: r.truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_host(req: &Value) -> Result<Value, String> {
        let v = 4usize;
        Ok(match req["op"].as_str().unwrap() {
            "describe" => json!({"vocab": ["<eos>", "a", "b", "c"], "state_dim": 2}),
            "next_token_distribution" => json!({"probs": vec![0.25; v]}),
            "token_logprobs" => {
                let n = req["tokens"].as_array().unwrap().len();
                json!({"logprobs": vec![0.25f64.ln(); n]})
            }
            "decoder_states" => {
                let n = req["tokens"].as_array().unwrap().len();
                json!({"states": vec![vec![1.0, 0.0]; n]})
            }
            "generate" => json!({"text": "a b", "truncated": false}),
            _ => json!({"error": "unknown op"}),
        })
    }

    fn dialogue() -> Dialogue {
        Dialogue::parse("d", "A: x", None).unwrap()
    }

    #[test]
    fn adapter_round_trips() {
        let m = ExternalModel::connect(Box::new(uniform_host), DecodeConfig::default()).unwrap();
        assert_eq!(m.vocab().len(), 4);
        let s = TokenizedSummary::from_ids(vec![1, 2, 0]);
        assert_eq!(m.token_logprobs(&dialogue(), &s).unwrap(), vec![0.25f64.ln(); 3]);
        assert_eq!(m.decoder_states(&dialogue(), &s).unwrap().len(), 3);
        let g = m.generate(&dialogue()).unwrap();
        assert_eq!(g.text, "a b");
        assert_eq!(g.tokens, vec![1, 2]);
        let dist = m.next_token_distribution(&dialogue(), &[1]).unwrap();
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn host_errors_surface() {
        let broken = |req: &Value| -> Result<Value, String> {
            match req["op"].as_str() {
                Some("describe") => Ok(json!({"vocab": ["a"], "state_dim": 1})),
                _ => Ok(json!({"error": "out of memory"})),
            }
        };
        let m = ExternalModel::connect(Box::new(broken), DecodeConfig::default()).unwrap();
        let err = m.token_logprobs(&dialogue(), &TokenizedSummary::from_ids(vec![0])).unwrap_err();
        assert!(err.to_string().contains("out of memory"));
        let unreachable = |_: &Value| -> Result<Value, String> { Err("connection refused".into()) };
        assert!(ExternalModel::connect(Box::new(unreachable), DecodeConfig::default()).is_err());
    }
}
