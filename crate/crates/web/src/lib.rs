//! Browser demo: an MTF kernel explorer, a side-by-side view of the classical
//! sharpening methods on a synthetic scene, and a high-pass detail viewer.
//!
//! Everything in [`demo`] is plain Rust and tested natively; the
//! `wasm-bindgen` wrappers only convert errors and byte buffers.

pub mod demo;

#[cfg(target_arch = "wasm32")]
mod bindings {
    use crate::demo;
    use wasm_bindgen::prelude::*;

    fn js_err(e: sen2sharp::Error) -> JsError {
        JsError::new(&e.to_string())
    }

    /// JSON with the kernel taps, its sigma and the sampled frequency response.
    #[wasm_bindgen(js_name = mtfKernel)]
    pub fn mtf_kernel(nyquist_gain: f64, ratio: usize) -> Result<String, JsError> {
        demo::mtf_summary(nyquist_gain, ratio)
            .map(|v| v.to_string())
            .map_err(js_err)
    }

    #[wasm_bindgen]
    pub struct Demo(demo::Demo);

    #[wasm_bindgen]
    impl Demo {
        #[wasm_bindgen(constructor)]
        pub fn new(size: usize, seed: u64, nyquist_gain: f64) -> Result<Demo, JsError> {
            demo::Demo::new(size, seed, nyquist_gain).map(Demo).map_err(js_err)
        }

        pub fn size(&self) -> usize {
            self.0.size()
        }

        /// Names accepted by `render`, as a JSON array.
        pub fn views(&self) -> String {
            serde_json::to_string(&self.0.views()).unwrap_or_default()
        }

        /// RGBA pixels of a view in the given false-colour band triple.
        pub fn render(&self, view: &str, r: &str, g: &str, b: &str) -> Result<Vec<u8>, JsError> {
            self.0.render(view, &[r, g, b]).map_err(js_err)
        }

        /// JSON array of `{method, report}` scored against the truth.
        pub fn metrics(&self, q_window: usize) -> Result<String, JsError> {
            self.0
                .metrics(q_window)
                .map(|v| v.to_string())
                .map_err(js_err)
        }

        /// Grey-level RGBA of the high-pass detail of a truth or 10 m band.
        pub fn highpass(&self, band: &str, nyquist_gain: f64) -> Result<Vec<u8>, JsError> {
            self.0.highpass(band, nyquist_gain).map_err(js_err)
        }
    }
}
