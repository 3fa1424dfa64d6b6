from .wiener import (DeconvConfig, psf_kernel, disk_kernel, wiener_deconvolve, disk_extract,
                     deconv_estimate)

__all__ = ['DeconvConfig', 'psf_kernel', 'disk_kernel', 'wiener_deconvolve', 'disk_extract',
           'deconv_estimate']
