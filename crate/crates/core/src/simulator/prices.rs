//! Price paths for one stock, in two flavours: intraday propagator
//! transients carried across days, or daily returns built from an explicit
//! lag kernel with intraday paths filled in around them.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::orders::SimOrder;
use crate::impact::prop_shape;

/// OHLC in price units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BarPrices {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StockPrices {
    pub bars: Vec<BarPrices>,
    /// Price at start and end of each order, in the order given.
    pub order_prices: Vec<(f64, f64)>,
}

/// Normalized transient of one order, `u` shares after its start, for an
/// execution lasting `len` shares: concave ramp to 1, then propagator decay.
pub(crate) fn transient(u: f64, len: f64, beta: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u < len {
        (u / len).powf(1.0 - beta)
    } else {
        prop_shape((u - len) / len, beta)
    }
}

/// Bar around the sampled log path: the range is `sigma * open`, widened to
/// the observed extremes when they do not fit.
fn bar_from_path(open: f64, close: f64, lo_path: f64, hi_path: f64, sigma: f64) -> BarPrices {
    let lo_p = lo_path.min(open).min(close);
    let hi_p = hi_path.max(open).max(close);
    let need = sigma * open;
    let range = hi_p - lo_p;
    let (low, high) = if range <= need {
        let low = lo_p - 0.5 * (need - range);
        (low, low + need)
    } else {
        (lo_p, hi_p)
    };
    BarPrices { open, high, low, close }
}

pub(crate) struct Common<'a> {
    pub sigma: f64,
    pub volumes: &'a [f64],
    pub checkpoints: &'a [f64],
    pub orders: &'a [SimOrder],
    pub market: &'a [f64],
    pub capm_beta: f64,
    pub noise: f64,
    pub gap_vol: f64,
    pub initial_price: f64,
    pub y: f64,
    pub beta: f64,
}

impl Common<'_> {
    fn amplitude(&self, o: &SimOrder) -> f64 {
        f64::from(o.sign) * self.y * self.sigma * o.phi.sqrt()
    }

    fn gap<R: Rng>(&self, day: usize, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        if day == 0 {
            0.0
        } else {
            self.gap_vol * z
        }
    }

    /// Event fractions of the day: checkpoints plus order starts and ends.
    /// Returns sorted `(v, tag)`, tag `Some((k, is_end))` for the k-th order of
    /// the day.
    fn events(&self, today: &[SimOrder]) -> Vec<(f64, Option<(usize, bool)>)> {
        let mut ev: Vec<(f64, Option<(usize, bool)>)> = self.checkpoints.iter().map(|&c| (c, None)).collect();
        for (k, o) in today.iter().enumerate() {
            ev.push((o.start, Some((k, false))));
            ev.push((o.start + o.duration, Some((k, true))));
        }
        ev.sort_by(|a, b| a.0.total_cmp(&b.0));
        ev
    }
}

fn day_slices(orders: &[SimOrder], n_days: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::with_capacity(n_days);
    let mut i = 0;
    for d in 0..n_days {
        let start = i;
        while i < orders.len() && orders[i].day == d {
            i += 1;
        }
        out.push(start..i);
    }
    out
}

struct Live {
    day: usize,
    /// Start in shares from the open of `day`.
    start: f64,
    len: f64,
    amp: f64,
}

/// Propagator mode: log price is a background (market drift, Brownian noise,
/// overnight gaps) plus one transient per order on a share clock that runs
/// across days. Transients older than `carryover_days` stop decaying and are
/// folded into a constant offset.
pub(crate) fn propagator_path<R: Rng>(c: &Common, carryover_days: usize, rng: &mut R) -> StockPrices {
    let n_days = c.volumes.len();
    let slices = day_slices(c.orders, n_days);
    // cumulative shares before each day; volumes are integers, so exact
    let mut cum = vec![0.0; n_days + 1];
    for d in 0..n_days {
        cum[d + 1] = cum[d] + c.volumes[d];
    }
    let mut live: Vec<Live> = Vec::new();
    let mut frozen = 0.0;
    let mut bg = c.initial_price.ln();
    let mut bars = Vec::with_capacity(n_days);
    let mut order_prices = vec![(0.0, 0.0); c.orders.len()];
    for d in 0..n_days {
        let vd = c.volumes[d];
        let value = |live: &[Live], v: f64| -> f64 {
            live.iter().map(|t| t.amp * transient(cum[d] - cum[t.day] + v * vd - t.start, t.len, c.beta)).sum()
        };
        let (keep, old): (Vec<Live>, Vec<Live>) = live.into_iter().partition(|t| t.day + carryover_days >= d);
        frozen += value(&old, 0.0);
        live = keep;
        bg += c.gap(d, rng);
        let today = &c.orders[slices[d].clone()];
        for o in today {
            live.push(Live { day: d, start: o.start * vd, len: o.duration * vd, amp: c.amplitude(o) });
        }
        let drift = c.capm_beta * c.market[d];
        let day_sd = c.noise * c.sigma;
        let (mut w, mut last) = (0.0, 0.0);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let open_x = bg + frozen + value(&live, 0.0);
        let mut close_x = open_x;
        for (v, tag) in c.events(today) {
            let z: f64 = StandardNormal.sample(rng);
            w += day_sd * (v - last).max(0.0).sqrt() * z;
            last = v;
            let x = bg + drift * v + w + frozen + value(&live, v);
            lo = lo.min(x);
            hi = hi.max(x);
            match tag {
                Some((k, false)) => order_prices[slices[d].start + k].0 = x.exp(),
                Some((k, true)) => order_prices[slices[d].start + k].1 = x.exp(),
                None => close_x = x,
            }
        }
        bg += drift + w;
        bars.push(bar_from_path(open_x.exp(), close_x.exp(), lo.exp(), hi.exp(), c.sigma));
    }
    StockPrices { bars, order_prices }
}

/// Explicit-kernel mode: the close-to-close log return is
/// `capm_beta * r_M + sum_l G(l) sigma(t - l) flow(t - l) + xi` exactly, where
/// `sigma` is the range-based volatility of the bars themselves. The same-day
/// term depends on today's range, which is solved by fixed-point iteration.
/// Intraday, today's transients ride on a linear drift and a Brownian bridge
/// pinned to the open and close.
pub(crate) fn explicit_path<R: Rng>(c: &Common, kernel: &[f64], flow: &[f64], rng: &mut R) -> StockPrices {
    let n_days = c.volumes.len();
    let slices = day_slices(c.orders, n_days);
    let mut sig_meas: Vec<f64> = Vec::with_capacity(n_days);
    let mut bars = Vec::with_capacity(n_days);
    let mut order_prices = vec![(0.0, 0.0); c.orders.len()];
    let mut prev_close_x = c.initial_price.ln();
    for d in 0..n_days {
        let xi: f64 = StandardNormal.sample(rng);
        let gap = c.gap(d, rng);
        let mut a = c.capm_beta * c.market[d] + c.noise * c.sigma * xi;
        for (l, g) in kernel.iter().enumerate().skip(1).take_while(|(l, _)| *l <= d) {
            a += g * sig_meas[d - l] * flow[d - l];
        }
        let k = kernel[0] * flow[d];
        let mut sigma = c.sigma;
        for _ in 0..200 {
            let next = c.sigma.max(((a - gap + k * sigma).exp() - 1.0).abs());
            let done = (next - sigma).abs() <= 1e-16 * sigma;
            sigma = next;
            if done {
                break;
            }
        }
        let move_x = a - gap + k * sigma;
        let open_x = prev_close_x + gap;
        let close_x = open_x + move_x;
        let (open, close) = (open_x.exp(), close_x.exp());
        // the range is exactly sigma * open, enclosing open and close
        let bar = bar_from_path(open, close, open.min(close), open.max(close), sigma);
        sig_meas.push((bar.high - bar.low) / bar.open);
        bars.push(bar);

        let today = &c.orders[slices[d].clone()];
        let vd = c.volumes[d];
        let shape = |v: f64| -> f64 {
            today.iter().map(|o| c.amplitude(o) * transient((v - o.start) * vd, o.duration * vd, c.beta)).sum()
        };
        let drift = move_x - shape(1.0);
        let mut ev = c.events(today);
        ev.push((1.0, None));
        let day_sd = c.noise * c.sigma;
        let (mut w, mut last) = (0.0, 0.0);
        let mut path = Vec::with_capacity(ev.len());
        for (v, tag) in &ev {
            let z: f64 = StandardNormal.sample(rng);
            w += day_sd * (v - last).max(0.0).sqrt() * z;
            last = *v;
            path.push((*v, *tag, w));
        }
        let w1 = w;
        for (v, tag, w) in path {
            if let Some((k, end)) = tag {
                let x = open_x + drift * v + shape(v) + (w - v * w1);
                let p = &mut order_prices[slices[d].start + k];
                if end {
                    p.1 = x.exp();
                } else {
                    p.0 = x.exp();
                }
            }
        }
        prev_close_x = close_x;
    }
    StockPrices { bars, order_prices }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn checkpoints() -> Vec<f64> {
        super::super::orders::volume_curve().iter().map(|c| c.1).collect()
    }

    #[test]
    fn transient_shape() {
        assert_eq!(transient(0.0, 10.0, 0.22), 0.0);
        assert!((transient(10.0, 10.0, 0.22) - 1.0).abs() < 1e-15);
        assert!((transient(20.0, 10.0, 0.22) - (2f64.powf(0.78) - 1.0)).abs() < 1e-15);
        assert!((transient(5.0, 10.0, 0.22) - 0.5f64.powf(0.78)).abs() < 1e-15);
    }

    #[test]
    fn isolated_order_without_noise_follows_the_propagator() {
        let cp = checkpoints();
        let orders = [SimOrder { day: 0, sign: 1, phi: 0.01, duration: 0.1, start: 0.2 }];
        let c = Common {
            sigma: 0.02,
            volumes: &[1e6],
            checkpoints: &cp,
            orders: &orders,
            market: &[0.0],
            capm_beta: 1.0,
            noise: 0.0,
            gap_vol: 0.0,
            initial_price: 20.0,
            y: 0.5,
            beta: 0.22,
        };
        let out = propagator_path(&c, 20, &mut ChaCha8Rng::seed_from_u64(0));
        let (ps, pe) = out.order_prices[0];
        let b = out.bars[0];
        let peak = (pe / ps).ln();
        assert!((peak / (0.5 * 0.02 * 0.1) - 1.0).abs() < 1e-10, "{peak}");
        let ratio = (b.close / ps).ln() / peak;
        assert!((ratio - prop_shape(7.0, 0.22)).abs() < 1e-10);
        assert!(((b.high - b.low) / b.open - 0.02).abs() < 1e-15);
    }

    #[test]
    fn explicit_returns_follow_the_kernel() {
        let cp = checkpoints();
        let flow = [0.3, -0.2, 0.1, 0.25];
        let kernel = [0.5, -0.1, 0.05];
        let c = Common {
            sigma: 0.02,
            volumes: &[1e6; 4],
            checkpoints: &cp,
            orders: &[],
            market: &[0.01, -0.02, 0.0, 0.005],
            capm_beta: 1.0,
            noise: 0.0,
            gap_vol: 0.01,
            initial_price: 20.0,
            y: 0.5,
            beta: 0.22,
        };
        let out = explicit_path(&c, &kernel, &flow, &mut ChaCha8Rng::seed_from_u64(0));
        let sig: Vec<f64> = out.bars.iter().map(|b| (b.high - b.low) / b.open).collect();
        for d in 1..4 {
            let r = (out.bars[d].close / out.bars[d - 1].close).ln();
            let model: f64 = c.market[d]
                + (0..=d.min(2)).map(|l| kernel[l] * sig[d - l] * flow[d - l]).sum::<f64>();
            assert!((r - model).abs() < 1e-14, "day {d}: {r} vs {model}");
        }
        assert!(sig.iter().all(|s| *s >= 0.02 - 1e-15));
    }
}
