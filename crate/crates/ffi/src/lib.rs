//! C ABI over the world core, replay and statistics.
//!
//! Every fallible function returns an [`SkStatus`]; on failure `sk_last_error` returns a
//! message for the calling thread. Handles are owned by the caller and released with the
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use simkit::agent::{cfg_combine, PolicyLogits, STEP_WIDTH};
use simkit::evalharness::success_rate;
use simkit::netproto::{replay, Trajectory};
use simkit::worldcore::{instantiate_task, ActionEvent, KeySet, WorldState, FRAME_CELLS};
use simkit::worlds::registry_list;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    NotFound = 3,
    Decode = 4,
    Step = 5,
    Io = 6,
    Diverged = 7,
    Panic = 8,
}

/// An owned world state.
pub struct SkWorld {
    state: WorldState,
}

/// Bytes allocated by the library; release with `sk_buffer_free`.
#[repr(C)]
pub struct SkBuffer {
    pub data: *mut u8,
    pub len: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("no interior nul"));
}

fn guard(f: impl FnOnce() -> Result<(), (SkStatus, String)>) -> SkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SkStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SkStatus::Panic
        }
    }
}

fn null(what: &str) -> (SkStatus, String) {
    (SkStatus::NullArgument, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SkStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SkStatus::InvalidArgument, format!("{what} is not utf-8")))
}

/// The last error message on this thread; valid until the next failing call.
#[no_mangle]
pub extern "C" fn sk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Number of cells in a frame.
#[no_mangle]
pub extern "C" fn sk_frame_cells() -> usize {
    FRAME_CELLS
}

/// Instantiates a registry task's initial state.
///
/// # Safety
/// `task_id` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sk_world_new_task(task_id: *const c_char, seed: u64, out: *mut *mut SkWorld) -> SkStatus {
    guard(|| {
        let id = str_arg(task_id, "task_id")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let task = registry_list(None)
            .into_iter()
            .find(|t| t.task_id == id)
            .ok_or_else(|| (SkStatus::NotFound, format!("unknown task {id}")))?;
        let state = instantiate_task(&task, seed).map_err(|e| (SkStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(SkWorld { state }));
        Ok(())
    })
}

/// Restores a world from save-state bytes.
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sk_world_load(bytes: *const u8, len: usize, out: *mut *mut SkWorld) -> SkStatus {
    guard(|| {
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let data = std::slice::from_raw_parts(bytes, len);
        let state = WorldState::load(data).map_err(|e| (SkStatus::Decode, e.to_string()))?;
        *out = Box::into_raw(Box::new(SkWorld { state }));
        Ok(())
    })
}

/// # Safety
/// `world` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sk_world_free(world: *mut SkWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Advances one tick. `keys` is a bit set over the 16 keys, `buttons` bit 0 is left and
/// bit 1 is right. Writes the new frame hash to `hash_out` when non-null.
///
/// # Safety
/// `world` must be a live handle; `hash_out` null or valid.
#[no_mangle]
pub unsafe extern "C" fn sk_world_step(world: *mut SkWorld, keys: u16, mouse_dx: i8, mouse_dy: i8, buttons: u8, hash_out: *mut u64) -> SkStatus {
    guard(|| {
        let w = world.as_mut().ok_or_else(|| null("world"))?;
        let action = ActionEvent {
            tick: w.state.tick,
            keys: KeySet::from_bits(keys),
            mouse_dx,
            mouse_dy,
            left_button: buttons & 1 != 0,
            right_button: buttons & 2 != 0,
        };
        action.validate().map_err(|e| (SkStatus::InvalidArgument, e.to_string()))?;
        let obs = w.state.advance(&action).map_err(|e| (SkStatus::Step, e.to_string()))?;
        if !hash_out.is_null() {
            *hash_out = obs.frame.hash();
        }
        Ok(())
    })
}

/// # Safety
/// `world` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sk_world_tick(world: *const SkWorld) -> u64 {
    world.as_ref().map_or(0, |w| w.state.tick)
}

/// # Safety
/// `world` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sk_world_frame_hash(world: *const SkWorld) -> u64 {
    world.as_ref().map_or(0, |w| w.state.frame_hash())
}

/// Writes the current frame as joint cell ids (row-major) into `cells`, which must hold
/// `sk_frame_cells()` entries.
///
/// # Safety
/// `cells` must point to `len` writable `u16`s.
#[no_mangle]
pub unsafe extern "C" fn sk_world_frame(world: *const SkWorld, cells: *mut u16, len: usize) -> SkStatus {
    guard(|| {
        let w = world.as_ref().ok_or_else(|| null("world"))?;
        if cells.is_null() {
            return Err(null("cells"));
        }
        if len < FRAME_CELLS {
            return Err((SkStatus::InvalidArgument, format!("need {FRAME_CELLS} cells, got {len}")));
        }
        let frame = w.state.observe().frame;
        let out = std::slice::from_raw_parts_mut(cells, FRAME_CELLS);
        for (o, c) in out.iter_mut().zip(frame.cells()) {
            *o = c.joint_id() as u16;
        }
        Ok(())
    })
}

/// Serializes the world into a library-owned buffer.
///
/// # Safety
/// `world` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sk_world_save(world: *const SkWorld, out: *mut SkBuffer) -> SkStatus {
    guard(|| {
        let w = world.as_ref().ok_or_else(|| null("world"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let bytes = w.state.save().into_boxed_slice();
        out.len = bytes.len();
        out.data = Box::into_raw(bytes).cast();
        Ok(())
    })
}

/// # Safety
/// `buf` must have been filled by this library.
#[no_mangle]
pub unsafe extern "C" fn sk_buffer_free(buf: *mut SkBuffer) {
    if let Some(b) = buf.as_mut() {
        if !b.data.is_null() {
            drop(Box::from_raw(std::ptr::slice_from_raw_parts_mut(b.data, b.len)));
        }
        b.data = std::ptr::null_mut();
        b.len = 0;
    }
}

/// Replays a trajectory file; writes the number of replayed ticks to `ticks_out`.
/// Returns `Diverged` when a frame hash differs.
///
/// # Safety
/// `path` must be nul-terminated; `ticks_out` null or valid.
#[no_mangle]
pub unsafe extern "C" fn sk_replay_file(path: *const c_char, ticks_out: *mut u64) -> SkStatus {
    guard(|| {
        let p = str_arg(path, "path")?;
        let traj = Trajectory::load(Path::new(p)).map_err(|e| (SkStatus::Io, e.to_string()))?;
        let hashes = replay(&traj).map_err(|e| (SkStatus::Diverged, e.to_string()))?;
        if !ticks_out.is_null() {
            *ticks_out = hashes.len() as u64;
        }
        Ok(())
    })
}

/// Success rate and normal-approximation 95% half-width.
///
/// # Safety
/// `rate` and `ci95` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sk_success_rate(successes: usize, n: usize, rate: *mut f64, ci95: *mut f64) -> SkStatus {
    guard(|| {
        if rate.is_null() || ci95.is_null() {
            return Err(null("output"));
        }
        let (r, c) = success_rate(successes, n).map_err(|e| (SkStatus::InvalidArgument, e.to_string()))?;
        *rate = r;
        *ci95 = c;
        Ok(())
    })
}

/// Guided logits `cond + lambda * (cond - uncond)` over `len` values (a multiple of the
/// per-step width).
///
/// # Safety
/// All three arrays must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn sk_cfg_combine(cond: *const f64, uncond: *const f64, len: usize, lambda: f64, out: *mut f64) -> SkStatus {
    guard(|| {
        if cond.is_null() || uncond.is_null() || out.is_null() {
            return Err(null("array"));
        }
        if !(lambda >= 0.0) {
            return Err((SkStatus::InvalidArgument, format!("lambda {lambda} must be >= 0")));
        }
        if len % STEP_WIDTH != 0 {
            return Err((SkStatus::InvalidArgument, format!("length {len} is not a multiple of {STEP_WIDTH}")));
        }
        let c = PolicyLogits::from_values(std::slice::from_raw_parts(cond, len).to_vec());
        let u = PolicyLogits::from_values(std::slice::from_raw_parts(uncond, len).to_vec());
        let g = cfg_combine(&c, &u, lambda).map_err(|e| (SkStatus::InvalidArgument, e.to_string()))?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&g.values);
        Ok(())
    })
}
