//! C ABI over the diqnn library.
//!
//! Networks and datasets are opaque handles owned by the caller and released
//! with the matching `*_free` function. Every fallible call returns a
//! [`DiqnnStatus`]; on failure [`diqnn_last_error`] describes the problem.
//! Panics are caught at the boundary and reported as [`DiqnnStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use diqnn::data::{load_idx, make_xor, Dataset};
use diqnn::linalg::Matrix;
use diqnn::margin::{compute_margin, margin_gradient};
use diqnn::model::{load_checkpoint, save_checkpoint, InitScheme, Network, NetworkSpec};
use diqnn::train::{accuracy, gradient_flow, train, Optimizer, RecordPolicy, TrainConfig};
use diqnn::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiqnnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Format = 4,
    Io = 5,
    Diverged = 6,
    Unsupported = 7,
    Degenerate = 8,
    BufferTooSmall = 9,
    Internal = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiqnnOptimizer {
    Gd = 0,
    Sgd = 1,
    GradientFlow = 2,
}

/// Opaque network handle.
pub struct DiqnnNetwork(Network);

/// Opaque dataset handle.
pub struct DiqnnDataset(Dataset);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiqnnMarginSummary {
    pub delta_mu: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub theta_norm: f64,
    pub degenerate: usize,
    pub samples: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiqnnTrainConfig {
    pub learning_rate: f64,
    /// Zero means full batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda_margin: f64,
    pub seed: u64,
    pub optimizer: DiqnnOptimizer,
    pub flow_step: f64,
    pub total_time: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiqnnTrainResult {
    pub steps: usize,
    pub final_loss: f64,
    pub train_accuracy: f64,
    /// NaN when no test set was given.
    pub test_accuracy: f64,
    pub delta_mu: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DiqnnStatus {
    match e {
        Error::Dimension(_) | Error::IndexOutOfRange { .. } => DiqnnStatus::Dimension,
        Error::Format(_) | Error::Length(_) | Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => {
            DiqnnStatus::Format
        }
        Error::Io(_) => DiqnnStatus::Io,
        Error::Diverged { .. } => DiqnnStatus::Diverged,
        Error::Unsupported(_) => DiqnnStatus::Unsupported,
        Error::Degenerate(_) => DiqnnStatus::Degenerate,
        Error::Spec(_) | Error::Contract(_) => DiqnnStatus::InvalidArgument,
        _ => DiqnnStatus::Internal,
    }
}

struct Fail(DiqnnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DiqnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DiqnnStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside diqnn".into());
            DiqnnStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(DiqnnStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(DiqnnStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, needed: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len < needed {
        return Err(Fail(
            DiqnnStatus::BufferTooSmall,
            format!("{what} holds {len} values, {needed} needed"),
        ));
    }
    if needed == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

unsafe fn net_ref<'a>(p: *const DiqnnNetwork) -> Result<&'a Network, Fail> {
    p.as_ref().map(|n| &n.0).ok_or_else(|| null("network"))
}

unsafe fn data_ref<'a>(p: *const DiqnnDataset) -> Result<&'a Dataset, Fail> {
    p.as_ref().map(|d| &d.0).ok_or_else(|| null("dataset"))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn diqnn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn diqnn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a randomly initialized network from a model string such as
/// `quadratic` or `lowrank:4`.
///
/// # Safety
/// `model` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn diqnn_network_new(
    model: *const c_char,
    inputs: usize,
    classes: usize,
    seed: u64,
    out: *mut *mut DiqnnNetwork,
) -> DiqnnStatus {
    guard(|| {
        let spec = NetworkSpec::parse(str_arg(model, "model")?, inputs, classes)?;
        put(out, DiqnnNetwork(Network::init(&spec, seed, InitScheme::Gaussian)?))
    })
}

/// The rank-one XOR network started at `c₁ = e₁, c₂ = e₂`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn diqnn_network_new_xor(out: *mut *mut DiqnnNetwork) -> DiqnnStatus {
    guard(|| {
        let spec = NetworkSpec::parse("lowrank:1", 2, 2)?;
        put(out, DiqnnNetwork(Network::init(&spec, 0, InitScheme::XorPaper)?))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn diqnn_network_load(path: *const c_char, out: *mut *mut DiqnnNetwork) -> DiqnnStatus {
    guard(|| put(out, DiqnnNetwork(load_checkpoint(str_arg(path, "path")?)?.network)))
}

/// # Safety
/// `net` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn diqnn_network_save(net: *const DiqnnNetwork, path: *const c_char) -> DiqnnStatus {
    guard(|| {
        save_checkpoint(str_arg(path, "path")?, net_ref(net)?, &Default::default())?;
        Ok(())
    })
}

/// # Safety
/// `net` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn diqnn_network_free(net: *mut DiqnnNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of parameters, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn diqnn_network_param_count(net: *const DiqnnNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.param_count())
}

/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn diqnn_network_inputs(net: *const DiqnnNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.inputs())
}

/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn diqnn_network_outputs(net: *const DiqnnNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.outputs())
}

/// Homogeneity degree `L`; `Unsupported` for nets with linear layers.
///
/// # Safety
/// `net` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn diqnn_network_degree(net: *const DiqnnNetwork, out: *mut u32) -> DiqnnStatus {
    guard(|| {
        let net = net_ref(net)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = net
            .homogeneity_degree()
            .ok_or_else(|| Fail(DiqnnStatus::Unsupported, "network is not homogeneous".into()))?;
        Ok(())
    })
}

/// Copies the flat parameter vector into `buf`.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn diqnn_network_get_params(net: *const DiqnnNetwork, buf: *mut f64, len: usize) -> DiqnnStatus {
    guard(|| {
        let net = net_ref(net)?;
        slice_out(buf, len, net.param_count(), "buffer")?.copy_from_slice(net.theta());
        Ok(())
    })
}

/// Replaces the parameters; `len` must equal the parameter count.
///
/// # Safety
/// `params` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn diqnn_network_set_params(net: *mut DiqnnNetwork, params: *const f64, len: usize) -> DiqnnStatus {
    guard(|| {
        let net = net.as_mut().map(|n| &mut n.0).ok_or_else(|| null("network"))?;
        net.set_theta(slice_arg(params, len, "params")?)?;
        Ok(())
    })
}

/// Evaluates the network on one input of length `inputs`.
///
/// # Safety
/// `x` must point to `x_len` doubles and `out` to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn diqnn_network_forward(
    net: *const DiqnnNetwork,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> DiqnnStatus {
    guard(|| {
        let net = net_ref(net)?;
        let y = net.predict(slice_arg(x, x_len, "x")?)?;
        slice_out(out, out_len, y.len(), "out")?.copy_from_slice(&y);
        Ok(())
    })
}

/// Builds a dataset from row-major features (`n × dim`) and labels below
/// `classes`. The arrays are copied.
///
/// # Safety
/// `features` must point to `n * dim` doubles and `labels` to `n` values.
#[no_mangle]
pub unsafe extern "C" fn diqnn_dataset_from_arrays(
    features: *const f64,
    labels: *const usize,
    n: usize,
    dim: usize,
    classes: usize,
    out: *mut *mut DiqnnDataset,
) -> DiqnnStatus {
    guard(|| {
        let total = n
            .checked_mul(dim)
            .ok_or_else(|| Fail(DiqnnStatus::InvalidArgument, "n * dim overflows".into()))?;
        let x = slice_arg(features, total, "features")?.to_vec();
        let y = slice_arg(labels, n, "labels")?.to_vec();
        put(out, DiqnnDataset(Dataset::new(Matrix::from_vec(n, dim, x)?, y, classes, "ffi")?))
    })
}

/// # Safety
/// Both paths must be NUL-terminated strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn diqnn_dataset_load_idx(
    images: *const c_char,
    labels: *const c_char,
    out: *mut *mut DiqnnDataset,
) -> DiqnnStatus {
    guard(|| {
        let data = load_idx(str_arg(images, "images")?, str_arg(labels, "labels")?)?;
        put(out, DiqnnDataset(data))
    })
}

/// The four-point XOR problem.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn diqnn_dataset_xor(out: *mut *mut DiqnnDataset) -> DiqnnStatus {
    guard(|| put(out, DiqnnDataset(make_xor())))
}

/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn diqnn_dataset_len(data: *const DiqnnDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn diqnn_dataset_dim(data: *const DiqnnDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.dim())
}

/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn diqnn_dataset_classes(data: *const DiqnnDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.classes())
}

/// # Safety
/// `data` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn diqnn_dataset_free(data: *mut DiqnnDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Normalized margin statistics of `net` on `data`.
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn diqnn_margin_summary(
    net: *const DiqnnNetwork,
    data: *const DiqnnDataset,
    out: *mut DiqnnMarginSummary,
) -> DiqnnStatus {
    guard(|| {
        let s = compute_margin(net_ref(net)?, data_ref(data)?)?.summary();
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = DiqnnMarginSummary {
            delta_mu: s.delta_mu,
            mu1: s.mu1,
            mu2: s.mu2,
            theta_norm: s.theta_norm,
            degenerate: s.degenerate,
            samples: s.samples,
        };
        Ok(())
    })
}

/// Gradient of the normalized margin with respect to the parameters.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn diqnn_margin_gradient(
    net: *const DiqnnNetwork,
    data: *const DiqnnDataset,
    buf: *mut f64,
    len: usize,
) -> DiqnnStatus {
    guard(|| {
        let net = net_ref(net)?;
        let g = margin_gradient(net, data_ref(data)?)?;
        slice_out(buf, len, g.len(), "buffer")?.copy_from_slice(&g);
        Ok(())
    })
}

/// Default hyperparameters: SGD, learning rate 0.01, batch 100, 5 epochs.
#[no_mangle]
pub extern "C" fn diqnn_train_config_default() -> DiqnnTrainConfig {
    let d = TrainConfig::default();
    DiqnnTrainConfig {
        learning_rate: d.learning_rate,
        batch_size: d.batch_size.unwrap_or(0),
        epochs: d.epochs,
        lambda_margin: d.lambda_margin,
        seed: d.seed,
        optimizer: DiqnnOptimizer::Sgd,
        flow_step: d.flow_step,
        total_time: d.total_time,
    }
}

/// Trains `net` in place. `test` may be null. `out` may be null.
///
/// # Safety
/// Handles must be live; `config` must point to a config struct.
#[no_mangle]
pub unsafe extern "C" fn diqnn_train(
    net: *mut DiqnnNetwork,
    train_set: *const DiqnnDataset,
    test_set: *const DiqnnDataset,
    config: *const DiqnnTrainConfig,
    out: *mut DiqnnTrainResult,
) -> DiqnnStatus {
    guard(|| {
        let net = net.as_mut().map(|n| &mut n.0).ok_or_else(|| null("network"))?;
        let train_set = data_ref(train_set)?;
        let test_set = test_set.as_ref().map(|d| &d.0);
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        let config = TrainConfig {
            learning_rate: c.learning_rate,
            batch_size: (c.batch_size > 0).then_some(c.batch_size),
            epochs: c.epochs,
            lambda_margin: c.lambda_margin,
            seed: c.seed,
            optimizer: match c.optimizer {
                DiqnnOptimizer::Gd => Optimizer::Gd,
                DiqnnOptimizer::Sgd => Optimizer::Sgd,
                DiqnnOptimizer::GradientFlow => Optimizer::GradientFlow,
            },
            flow_step: c.flow_step,
            total_time: c.total_time,
            record: RecordPolicy::EpochEnd,
            eval_limit: None,
        };
        let trace = match config.optimizer {
            Optimizer::GradientFlow => gradient_flow(net, train_set, test_set, &config, |_, _| Ok(()))?,
            _ => train(net, train_set, test_set, &config)?,
        };
        if let Some(out) = out.as_mut() {
            let last = trace.last();
            *out = DiqnnTrainResult {
                steps: last.map_or(0, |r| r.step),
                final_loss: last.map_or(f64::NAN, |r| r.loss),
                train_accuracy: accuracy(net, train_set)?,
                test_accuracy: match test_set {
                    Some(t) => accuracy(net, t)?,
                    None => f64::NAN,
                },
                delta_mu: last.map_or(f64::NAN, |r| r.delta_mu),
            };
        }
        Ok(())
    })
}
