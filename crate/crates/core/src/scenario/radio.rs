//! Geometric radio environment used for the throughput metrics.
//!
//! Links: LU `j` to its receiver, LU `j` to the CR receiver, the CR link, and
//! the CR transmitter to LU receiver `j`. Large-scale states are redrawn every
//! `large_scale_period` slots from the current positions; small-scale fading
//! is drawn per slot and subcarrier. The CR receiver walks between uniformly
//! drawn waypoints in its disc.

use rand::Rng;

use crate::channel::{adapt_rate, elevation_angle, sample_link, ChannelEnvParams, LinkState};
use crate::error::Result;
use crate::SimRng;

use super::config::{GeometryConfig, RadioConfig};
use super::metrics::link_success;

#[derive(Debug, Clone, Copy)]
struct Node {
    x: f64,
    y: f64,
    h: f64,
}

fn uniform_in_disc<R: Rng + ?Sized>(cx: f64, cy: f64, radius: f64, rng: &mut R) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let a = rng.random::<f64>() * std::f64::consts::TAU;
    (cx + r * a.cos(), cy + r * a.sin())
}

/// Outcome of one slot on the radio side.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SlotRadio {
    /// Sum of successful CR rates.
    pub cr_bits: f64,
    pub lu_transmissions: u64,
    pub lu_successes: u64,
}

#[derive(Debug, Clone)]
pub struct RadioEnvironment {
    env: ChannelEnvParams,
    radio: RadioConfig,
    geometry: GeometryConfig,
    lu_tx: Vec<Node>,
    lu_rx: Vec<Node>,
    cr_tx: Node,
    cr_rx: Node,
    waypoint: (f64, f64),
    lu_link: Vec<LinkState>,
    lu_to_cr: Vec<LinkState>,
    cr_to_lu: Vec<LinkState>,
    cr_link: LinkState,
    cr_rate: f64,
    band_width: usize,
    subcarriers: usize,
    rng: SimRng,
}

fn link(a: Node, b: Node, env: &ChannelEnvParams, rng: &mut SimRng) -> Result<LinkState> {
    let horizontal = (a.x - b.x).hypot(a.y - b.y);
    let dz = a.h - b.h;
    let distance = horizontal.hypot(dz).max(1.0);
    sample_link(distance, elevation_angle(horizontal, dz), env, rng)
}

impl RadioEnvironment {
    pub fn new(
        env: ChannelEnvParams,
        radio: RadioConfig,
        geometry: GeometryConfig,
        subcarriers: usize,
        bands: usize,
        mut rng: SimRng,
    ) -> Result<Self> {
        let lu_tx: Vec<Node> = geometry
            .lu_tx
            .iter()
            .map(|p| Node {
                x: p[0],
                y: p[1],
                h: geometry.lu_tx_height_m,
            })
            .collect();
        let lu_rx = lu_tx
            .iter()
            .map(|t| {
                let (x, y) = uniform_in_disc(t.x, t.y, geometry.lu_rx_radius_m, &mut rng);
                Node {
                    x,
                    y,
                    h: geometry.lu_rx_height_m,
                }
            })
            .collect();
        let cr_tx = Node {
            x: geometry.cr_tx[0],
            y: geometry.cr_tx[1],
            h: geometry.cr_tx_height_m,
        };
        let (x, y) = uniform_in_disc(cr_tx.x, cr_tx.y, geometry.cr_rx_radius_m, &mut rng);
        let waypoint = uniform_in_disc(cr_tx.x, cr_tx.y, geometry.cr_rx_radius_m, &mut rng);
        let placeholder = LinkState {
            is_los: false,
            psi: 0.0,
            k_factor: 0.0,
            distance_m: 1.0,
            elevation_rad: 1.0,
        };
        let mut out = RadioEnvironment {
            env,
            radio,
            lu_tx,
            lu_rx,
            cr_tx,
            cr_rx: Node {
                x,
                y,
                h: geometry.cr_rx_height_m,
            },
            geometry,
            waypoint,
            lu_link: Vec::new(),
            lu_to_cr: Vec::new(),
            cr_to_lu: Vec::new(),
            cr_link: placeholder,
            cr_rate: 0.0,
            band_width: subcarriers / bands.max(1),
            subcarriers,
            rng,
        };
        out.refresh()?;
        Ok(out)
    }

    fn refresh(&mut self) -> Result<()> {
        let env = self.env;
        let rng = &mut self.rng;
        self.lu_link = self
            .lu_tx
            .iter()
            .zip(&self.lu_rx)
            .map(|(&t, &r)| link(t, r, &env, rng))
            .collect::<Result<_>>()?;
        self.lu_to_cr = self
            .lu_tx
            .iter()
            .map(|&t| link(t, self.cr_rx, &env, rng))
            .collect::<Result<_>>()?;
        self.cr_to_lu = self
            .lu_rx
            .iter()
            .map(|&r| link(self.cr_tx, r, &env, rng))
            .collect::<Result<_>>()?;
        self.cr_link = link(self.cr_tx, self.cr_rx, &env, rng)?;
        self.cr_rate = adapt_rate(
            self.cr_link.psi,
            self.cr_link.k_factor,
            self.radio.cr_power_w,
            env.noise_power,
            env.bandwidth_w,
        );
        Ok(())
    }

    fn step_mobility(&mut self) {
        let step = self.geometry.cr_speed_mps * self.radio.slot_ms * 1e-3;
        let (dx, dy) = (self.waypoint.0 - self.cr_rx.x, self.waypoint.1 - self.cr_rx.y);
        let gap = dx.hypot(dy);
        if gap <= step {
            self.cr_rx.x = self.waypoint.0;
            self.cr_rx.y = self.waypoint.1;
            self.waypoint = uniform_in_disc(self.cr_tx.x, self.cr_tx.y, self.geometry.cr_rx_radius_m, &mut self.rng);
        } else {
            self.cr_rx.x += dx / gap * step;
            self.cr_rx.y += dy / gap * step;
        }
    }

    /// Rate the CR uses under the current large-scale state.
    pub fn cr_rate(&self) -> f64 {
        self.cr_rate
    }

    fn owner(&self, k: usize) -> usize {
        (k / self.band_width.max(1)).min(self.lu_tx.len() - 1)
    }

    /// Advances one slot. The CR's rate is fixed by interference-free
    /// adaptation; success uses the realized SINR with interference from the
    /// LU owning the subcarrier, and vice versa for the LU.
    pub fn slot(&mut self, t: usize, access: u64, busy: u64) -> Result<SlotRadio> {
        if t > 0 && t.is_multiple_of(self.geometry.large_scale_period) {
            self.refresh()?;
        }
        self.step_mobility();
        let w = self.env.bandwidth_w;
        let noise = self.env.noise_power;
        let (p_cr, p_lu) = (self.radio.cr_power_w, self.radio.lu_power_w);
        let mut out = SlotRadio::default();
        for k in 0..self.subcarriers {
            let j = self.owner(k);
            let g_cr = self.cr_link.sample_gain(&mut self.rng);
            let g_lu_cr = self.lu_to_cr[j].sample_gain(&mut self.rng);
            let g_lu = self.lu_link[j].sample_gain(&mut self.rng);
            let g_cr_lu = self.cr_to_lu[j].sample_gain(&mut self.rng);
            let accessed = (access >> k) & 1 == 1;
            let occupied = (busy >> k) & 1 == 1;
            if accessed {
                let interference = if occupied { g_lu_cr * p_lu } else { 0.0 };
                let sinr = g_cr * p_cr / (noise + interference);
                if link_success(self.cr_rate, sinr, w) {
                    out.cr_bits += self.cr_rate;
                }
            }
            if occupied {
                let interference = if accessed { g_cr_lu * p_cr } else { 0.0 };
                let sinr = g_lu * p_lu / (noise + interference);
                out.lu_transmissions += 1;
                if link_success(self.radio.lu_rate_bps, sinr, w) {
                    out.lu_successes += 1;
                }
            }
        }
        Ok(out)
    }
}
