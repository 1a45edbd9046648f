//! Batched second-order jets: each tensor carries its value together with
//! its derivatives with respect to the scaled inputs `t` and `r`, plus the
//! second derivative in `r`. Every activation and product below propagates
//! the four channels exactly, and has a matching reverse-mode rule.

use ndarray::{Array2, Zip};

use super::Real;

#[derive(Debug, Clone)]
pub struct Jet<T: Real> {
    pub v: Array2<T>,
    pub t: Option<Array2<T>>,
    /// First and second `r` derivatives always travel together.
    pub r: Option<(Array2<T>, Array2<T>)>,
}

impl<T: Real> Jet<T> {
    pub fn rows(&self) -> usize {
        self.v.nrows()
    }

    pub fn cols(&self) -> usize {
        self.v.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        let z = || Array2::zeros(self.v.raw_dim());
        Jet {
            v: z(),
            t: self.t.as_ref().map(|_| z()),
            r: self.r.as_ref().map(|_| (z(), z())),
        }
    }

    /// Adds `other` into `self`; `self` must carry every channel `other` has.
    pub fn accumulate(&mut self, other: &Jet<T>) {
        self.v += &other.v;
        if let Some(ot) = &other.t {
            *self.t.as_mut().expect("channel layout") += ot;
        }
        if let Some((or, orr)) = &other.r {
            let (r, rr) = self.r.as_mut().expect("channel layout");
            *r += or;
            *rr += orr;
        }
    }

    /// Adds `other` into `self` restricted to the channels `self` carries.
    fn accumulate_restricted(&mut self, other: &Jet<T>, sign: T) {
        self.v.scaled_add(sign, &other.v);
        if let (Some(t), Some(ot)) = (self.t.as_mut(), other.t.as_ref()) {
            t.scaled_add(sign, ot);
        }
        if let (Some((r, rr)), Some((or, orr))) = (self.r.as_mut(), other.r.as_ref()) {
            r.scaled_add(sign, or);
            rr.scaled_add(sign, orr);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    /// First three derivatives of the activation, written in terms of the
    /// activated value `a`.
    #[inline]
    fn derivs<T: Real>(self, a: T) -> (T, T, T) {
        let one = T::one();
        let two = one + one;
        match self {
            Activation::Tanh => {
                let s = one - a * a;
                let s1 = -two * a * s;
                let s2 = -two * (s * s + a * s1);
                (s, s1, s2)
            }
            Activation::Sigmoid => {
                let s = a * (one - a);
                let s1 = s * (one - two * a);
                let s2 = s1 * (one - two * a) - two * s * s;
                (s, s1, s2)
            }
        }
    }

    #[inline]
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => T::one() / (T::one() + (-z).exp()),
        }
    }

    pub fn forward<T: Real>(self, z: &Jet<T>) -> Jet<T> {
        let v = z.v.mapv(|x| self.apply(x));
        let t = z.t.as_ref().map(|zt| {
            let mut out = zt.clone();
            Zip::from(&mut out).and(&v).for_each(|o, &a| *o = *o * self.derivs(a).0);
            out
        });
        let r = z.r.as_ref().map(|(zr, zrr)| {
            let mut r = zr.clone();
            let mut rr = zrr.clone();
            Zip::from(&mut r).and(&mut rr).and(&v).for_each(|r, rr, &a| {
                let (s, s1, _) = self.derivs(a);
                let zr = *r;
                *r = s * zr;
                *rr = s * *rr + s1 * zr * zr;
            });
            (r, rr)
        });
        Jet { v, t, r }
    }

    /// Reverse rule. `z` is the pre-activation jet, `a` the output jet.
    pub fn backward<T: Real>(self, z: &Jet<T>, a: &Jet<T>, da: &Jet<T>) -> Jet<T> {
        let two = T::one() + T::one();
        let mut dz = da.zeros_like();
        // dz_v collects the value path plus the sensitivity of s, s'
        Zip::from(&mut dz.v).and(&a.v).and(&da.v).for_each(|o, &av, &g| {
            *o = g * self.derivs(av).0;
        });
        if let (Some(dzt), Some(zt), Some(dat)) = (dz.t.as_mut(), z.t.as_ref(), da.t.as_ref()) {
            Zip::from(dzt)
                .and(&mut dz.v)
                .and(&a.v)
                .and(zt)
                .and(dat)
                .for_each(|o, ov, &av, &zt, &g| {
                    let (s, s1, _) = self.derivs(av);
                    *o = g * s;
                    *ov = *ov + g * zt * s1;
                });
        }
        if let (Some((zr, zrr)), Some((dar, darr))) = (z.r.as_ref(), da.r.as_ref()) {
            let (dzr, dzrr) = dz.r.as_mut().expect("layout");
            Zip::from(dzr)
                .and(dzrr)
                .and(zr)
                .and(dar)
                .and(darr)
                .and(&a.v)
                .for_each(|or, orr, &zr, &gr, &grr, &av| {
                    let (s, s1, _) = self.derivs(av);
                    *or = gr * s + grr * s1 * two * zr;
                    *orr = grr * s;
                });
            Zip::from(&mut dz.v)
                .and(&a.v)
                .and(zr)
                .and(zrr)
                .and(dar)
                .and(darr)
                .for_each(|ov, &av, &zr, &zrr, &gr, &grr| {
                    let (_, s1, s2) = self.derivs(av);
                    let ds = gr * zr + grr * zrr;
                    let ds1 = grr * zr * zr;
                    *ov = *ov + ds * s1 + ds1 * s2;
                });
        }
        dz
    }
}

/// `x + sign * y` with the union of channels.
pub fn add<T: Real>(x: &Jet<T>, y: &Jet<T>, sign: T) -> Jet<T> {
    let mut out = union_zeros(x, y);
    out.accumulate_restricted(x, T::one());
    out.accumulate_restricted(y, sign);
    out
}

fn union_zeros<T: Real>(x: &Jet<T>, y: &Jet<T>) -> Jet<T> {
    let z = || Array2::zeros(x.v.raw_dim());
    Jet {
        v: z(),
        t: (x.t.is_some() || y.t.is_some()).then(z),
        r: (x.r.is_some() || y.r.is_some()).then(|| (z(), z())),
    }
}

/// Reverse of [`add`]: adjoints restricted to each operand's channels.
pub fn add_backward<T: Real>(x: &Jet<T>, y: &Jet<T>, dout: &Jet<T>, sign: T) -> (Jet<T>, Jet<T>) {
    let mut dx = x.zeros_like();
    dx.accumulate_restricted(dout, T::one());
    let mut dy = y.zeros_like();
    dy.accumulate_restricted(dout, sign);
    (dx, dy)
}

/// Elementwise product with the Leibniz rule up to `d2/dr2`.
pub fn mul<T: Real>(x: &Jet<T>, y: &Jet<T>) -> Jet<T> {
    let two = T::one() + T::one();
    let v = &x.v * &y.v;
    let t = match (&x.t, &y.t) {
        (None, None) => None,
        (Some(xt), None) => Some(xt * &y.v),
        (None, Some(yt)) => Some(&x.v * yt),
        (Some(xt), Some(yt)) => Some(xt * &y.v + &x.v * yt),
    };
    let r = match (&x.r, &y.r) {
        (None, None) => None,
        (Some((xr, xrr)), None) => Some((xr * &y.v, xrr * &y.v)),
        (None, Some((yr, yrr))) => Some((&x.v * yr, &x.v * yrr)),
        (Some((xr, xrr)), Some((yr, yrr))) => {
            let r = xr * &y.v + &x.v * yr;
            let mut rr = xrr * &y.v + &x.v * yrr;
            Zip::from(&mut rr)
                .and(xr)
                .and(yr)
                .for_each(|o, &a, &b| *o = *o + two * a * b);
            Some((r, rr))
        }
    };
    Jet { v, t, r }
}

pub fn mul_backward<T: Real>(x: &Jet<T>, y: &Jet<T>, dout: &Jet<T>) -> (Jet<T>, Jet<T>) {
    (mul_backward_one(x, y, dout), mul_backward_one(y, x, dout))
}

/// Adjoint of `p = x * y` with respect to `x`.
fn mul_backward_one<T: Real>(x: &Jet<T>, y: &Jet<T>, dp: &Jet<T>) -> Jet<T> {
    let two = T::one() + T::one();
    let mut dx = x.zeros_like();
    dx.v = &dp.v * &y.v;
    if let (Some(dpt), Some(yt)) = (&dp.t, &y.t) {
        Zip::from(&mut dx.v)
            .and(dpt)
            .and(yt)
            .for_each(|o, &g, &b| *o = *o + g * b);
    }
    if let (Some((dpr, dprr)), Some((yr, yrr))) = (&dp.r, &y.r) {
        Zip::from(&mut dx.v)
            .and(dpr)
            .and(dprr)
            .and(yr)
            .and(yrr)
            .for_each(|o, &gr, &grr, &br, &brr| *o = *o + gr * br + grr * brr);
    }
    if let (Some(dxt), Some(dpt)) = (dx.t.as_mut(), &dp.t) {
        *dxt = dpt * &y.v;
    }
    if let (Some((dxr, dxrr)), Some((dpr, dprr))) = (dx.r.as_mut(), &dp.r) {
        *dxr = dpr * &y.v;
        if let Some((yr, _)) = &y.r {
            Zip::from(&mut *dxr)
                .and(dprr)
                .and(yr)
                .for_each(|o, &g, &b| *o = *o + two * g * b);
        }
        *dxrr = dprr * &y.v;
    }
    dx
}

/// Column-wise concatenation.
pub fn concat<T: Real>(x: &Jet<T>, y: &Jet<T>) -> Jet<T> {
    let cat = |a: &Array2<T>, b: &Array2<T>| {
        ndarray::concatenate(ndarray::Axis(1), &[a.view(), b.view()]).expect("same row count")
    };
    let zx = || Array2::zeros(x.v.raw_dim());
    let zy = || Array2::zeros(y.v.raw_dim());
    let t = match (&x.t, &y.t) {
        (None, None) => None,
        (a, b) => Some(cat(&a.clone().unwrap_or_else(zx), &b.clone().unwrap_or_else(zy))),
    };
    let r = match (&x.r, &y.r) {
        (None, None) => None,
        (a, b) => {
            let (ar, arr) = a.clone().unwrap_or_else(|| (zx(), zx()));
            let (br, brr) = b.clone().unwrap_or_else(|| (zy(), zy()));
            Some((cat(&ar, &br), cat(&arr, &brr)))
        }
    };
    Jet {
        v: cat(&x.v, &y.v),
        t,
        r,
    }
}

pub fn concat_backward<T: Real>(x: &Jet<T>, y: &Jet<T>, dout: &Jet<T>) -> (Jet<T>, Jet<T>) {
    let nx = x.cols();
    let split = |j: &Jet<T>, template: &Jet<T>, lo: usize, hi: usize| {
        let sl = |a: &Array2<T>| a.slice(ndarray::s![.., lo..hi]).to_owned();
        let mut out = template.zeros_like();
        out.v = sl(&j.v);
        if let (Some(o), Some(src)) = (out.t.as_mut(), &j.t) {
            *o = sl(src);
        }
        if let (Some((o, oo)), Some((src, srcc))) = (out.r.as_mut(), &j.r) {
            *o = sl(src);
            *oo = sl(srcc);
        }
        out
    };
    (split(dout, x, 0, nx), split(dout, y, nx, dout.cols()))
}
