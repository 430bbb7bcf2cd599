use ndarray::{ArrayD, Axis, Zip};

use crate::{Real, Tensor, Var};

/// Reduces a broadcast gradient back onto `shape`.
pub(crate) fn sum_to_shape<T: Real>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut g = grad.clone();
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (axis, &n) in shape.iter().enumerate() {
        if n == 1 && g.shape()[axis] != 1 {
            g = g.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
    }
    debug_assert_eq!(g.shape(), shape);
    g
}

fn unary<'g, T: Real, F, D>(x: Var<'g, T>, f: F, df: D) -> Var<'g, T>
where
    F: Fn(T) -> T,
    D: Fn(T, T) -> T + 'static,
{
    // df(input, output) -> local derivative
    let xv = x.value();
    let out = xv.mapv(f);
    let saved_out = out.clone();
    x.op(&[x], out, move |g, _| {
        let mut dx = g.clone();
        Zip::from(&mut dx)
            .and(&*xv)
            .and(&saved_out)
            .for_each(|d, &xi, &yi| *d *= df(xi, yi));
        vec![Some(dx)]
    })
}

impl<'g, T: Real> Var<'g, T> {
    /// Broadcasting sum.
    pub fn add(self, rhs: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), rhs.value());
        let out = &*a + &*b;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.op(&[self, rhs], out, move |g, need| {
            vec![
                need[0].then(|| sum_to_shape(g, &sa)),
                need[1].then(|| sum_to_shape(g, &sb)),
            ]
        })
    }

    pub fn sub(self, rhs: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), rhs.value());
        let out = &*a - &*b;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.op(&[self, rhs], out, move |g, need| {
            vec![
                need[0].then(|| sum_to_shape(g, &sa)),
                need[1].then(|| sum_to_shape(&g.mapv(|v| -v), &sb)),
            ]
        })
    }

    pub fn mul(self, rhs: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), rhs.value());
        let out = &*a * &*b;
        self.op(&[self, rhs], out, move |g, need| {
            vec![
                need[0].then(|| sum_to_shape(&(g * &*b), a.shape())),
                need[1].then(|| sum_to_shape(&(g * &*a), b.shape())),
            ]
        })
    }

    pub fn div(self, rhs: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), rhs.value());
        let out = &*a / &*b;
        self.op(&[self, rhs], out, move |g, need| {
            let ga = need[0].then(|| sum_to_shape(&(g / &*b), a.shape()));
            let gb = need[1].then(|| {
                let num = g * &*a;
                let den = &*b * &*b;
                sum_to_shape(&(-(num / den)), b.shape())
            });
            vec![ga, gb]
        })
    }

    pub fn neg(self) -> Var<'g, T> {
        self.mul_scalar(-T::one())
    }

    pub fn mul_scalar(self, s: T) -> Var<'g, T> {
        let out = self.value().mapv(|v| v * s);
        self.op(&[self], out, move |g, _| vec![Some(g.mapv(|v| v * s))])
    }

    pub fn add_scalar(self, s: T) -> Var<'g, T> {
        let out = self.value().mapv(|v| v + s);
        self.op(&[self], out, move |g, _| vec![Some(g.clone())])
    }

    /// `s - self`
    pub fn rsub_scalar(self, s: T) -> Var<'g, T> {
        let out = self.value().mapv(|v| s - v);
        self.op(&[self], out, move |g, _| vec![Some(g.mapv(|v| -v))])
    }

    pub fn square(self) -> Var<'g, T> {
        let two = T::lit(2.0);
        unary(self, |v| v * v, move |x, _| two * x)
    }

    pub fn sqrt(self) -> Var<'g, T> {
        let half = T::lit(0.5);
        unary(self, |v| v.sqrt(), move |_, y| half / y)
    }

    /// Subgradient 0 at the origin.
    pub fn abs(self) -> Var<'g, T> {
        unary(
            self,
            |v| v.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn tanh(self) -> Var<'g, T> {
        unary(self, |v| v.tanh(), |_, y| T::one() - y * y)
    }

    pub fn relu(self) -> Var<'g, T> {
        unary(
            self,
            |v| if v > T::zero() { v } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'g, T> {
        let s = T::lit(slope);
        unary(
            self,
            move |v| if v > T::zero() { v } else { v * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    /// Multiplies by a constant array (broadcasting), no gradient to the constant.
    pub fn mul_const(self, c: &ArrayD<T>) -> Var<'g, T> {
        let a = self.value();
        let out = &*a * c;
        let c = c.clone();
        let sa = a.shape().to_vec();
        self.op(&[self], out, move |g, _| vec![Some(sum_to_shape(&(g * &c), &sa))])
    }
}
