#!/usr/bin/env python

from setuptools import setup

LONG_DESCRIPTION = \
'''The program builds and evaluates a small endoscopy report generator.
Frame sequences with time-stamped report sentences are turned into image-report pairs by keyframe
sampling, quality filtering and alignment. A micro vision-language model is fine-tuned with low-rank
adapters and aligned with preference optimisation (DPO, SimPO or ORPO).

Generated reports are scored with BLEU, METEOR, ROUGE-L and CIDEr, and expert score sheets are
aggregated into a weighted Physician Score with inter-rater agreement.'''


setup(
    name='LDP',
    version='1.0.0',
    packages=['LDP'],
    package_dir={'LDP': 'LDP'},
    package_data={'LDP': ['data/*.yaml', 'data/*.txt', 'data/prompts/*.txt']},
    entry_points={
        'console_scripts': ['ldp = LDP.__main__:main']
    },
    license='MIT license',
    description=('Parameter-efficient fine-tuning, preference alignment and evaluation of a micro '
                 'multimodal endoscopy report generator.'),
    long_description=LONG_DESCRIPTION,
    python_requires='>=3.9',
    install_requires=['numpy>=1.22',
                      'PyYAML>=5.1'],
    keywords=['endoscopy', 'report generation', 'LoRA', 'DPO', 'multimodal', 'evaluation'],
    classifiers=[
        'Programming Language :: Python :: 3.9',
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Medical Science Apps.',
        'Development Status :: 4 - Beta']
)
